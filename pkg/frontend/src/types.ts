// Wire types mirroring the server's serialization field-for-field.
// Field names are the wire names; do not rename them client-side.

export interface CreateSessionRequest {
    history?: number[];
    external_ids?: string[];
    label?: number;
    label_external_id?: string;
    user_id?: string;
    config?: SessionConfigOverrides;
}

export interface SessionConfigOverrides {
    k_final?: number;
    k_retrieve?: number;
    max_turns?: number;
    mask_history?: boolean;
    seed?: number;
    char_budget?: number;
    stage?: Stage;
}

export type Stage = 'cold_start' | 'recommendation';

export interface CreateSessionResponse {
    session_id: string;
    system_prompt: string;
    initial_context: string;
}

export interface RetrievedItem {
    item_id: number;
    title: string;
    score: number;
}

export interface TurnRecord {
    thought: string;
    preference: string;
    retrieved: number[];
}

export interface TrajectoryRecord {
    m: number;
    history: number[] | null;
    turns: TurnRecord[];
    final_titles: string[];
    final_items: number[];
    raw_text: string;
}

export interface FormatReportRecord {
    structure_ok: boolean;
    list_shape_ok: boolean;
    preference_tags_ok: boolean;
    grounding_ok: boolean;
    invoked_at_least_once: boolean;
    overall_ok: boolean;
}

export interface RewardBreakdown {
    format: number;
    invocation: number;
    diversity: number;
    point: number;
    hit: number;
    rank: number;
    stage: Stage;
    stage_total: number;
}

export interface RetrievalResponse {
    status: 'retrieval';
    injected_text: string;
    items: RetrievedItem[];
    warning?: string;
}

export interface TerminalResponse {
    status: 'terminal' | 'truncated';
    trajectory: TrajectoryRecord;
    report: FormatReportRecord;
    rewards: RewardBreakdown;
    truncated: boolean;
    warning?: string;
}

export interface IncompleteResponse {
    status: 'incomplete';
    warning?: string;
}

export type ContinueResponse = RetrievalResponse | TerminalResponse | IncompleteResponse;

export interface SessionSnapshot {
    session_id: string;
    state: string;
    m: number;
    context_chars: number;
    raw_chars: number;
    k_final: number;
    created_at: number;
    expires_at: number;
}

export interface ItemRecord {
    item_id: number;
    external_id: string;
    title: string;
    aux_text: string | null;
}

export interface ScoreRequest {
    trajectory: TrajectoryRecord;
    label: number;
    stage?: Stage;
    k_final?: number;
}
