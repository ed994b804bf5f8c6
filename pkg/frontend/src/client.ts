import type {
    ContinueResponse,
    CreateSessionRequest,
    CreateSessionResponse,
    ItemRecord,
    RewardBreakdown,
    ScoreRequest,
    SessionSnapshot,
    Stage,
    TrajectoryRecord,
} from './types.js';

export interface RetryPolicy {
    /** Total attempts including the first one. */
    maxAttempts: number;
    /** Base backoff; attempt n waits n * backoffMs. */
    backoffMs: number;
}

export interface ClientConfig {
    baseUrl: string;
    timeoutMs?: number;
    retry?: RetryPolicy;
}

/** Network-level failure (or 503) after exhausting retries. */
export class TransportError extends Error {
    constructor(message: string, public readonly cause?: unknown) {
        super(message);
        this.name = 'TransportError';
    }
}

/** Non-retryable server rejection (4xx) with the server's message. */
export class ApiError extends Error {
    constructor(
        message: string,
        public readonly status: number,
        public readonly body: unknown,
    ) {
        super(message);
        this.name = 'ApiError';
    }
}

/** Client-side session misuse, e.g. continuing a closed handle. */
export class SessionStateError extends Error {
    constructor(message: string) {
        super(message);
        this.name = 'SessionStateError';
    }
}

export interface SessionHandle {
    sessionId: string;
    systemPrompt: string;
    /** Full prompt + episode text, grown by continue_() exactly as the
     *  server grows it. Feed this to the policy. */
    context: string;
    state: 'open' | 'closed';
}

const DEFAULT_TIMEOUT_MS = 30_000;
const DEFAULT_RETRY: RetryPolicy = { maxAttempts: 3, backoffMs: 100 };

function sleep(ms: number): Promise<void> {
    return new Promise((resolve) => setTimeout(resolve, ms));
}

/**
 * Thin typed client for the environment service. Transports records as-is:
 * no reward math, no trajectory re-validation happens client-side.
 *
 * A client instance is safe to share across sessions; calls for one
 * session must be serialized by the caller.
 */
export class DeepRecClient {
    private readonly baseUrl: string;
    private readonly timeoutMs: number;
    private readonly retry: RetryPolicy;

    constructor(config: ClientConfig) {
        this.baseUrl = config.baseUrl.replace(/\/+$/, '');
        this.timeoutMs = config.timeoutMs ?? DEFAULT_TIMEOUT_MS;
        this.retry = config.retry ?? DEFAULT_RETRY;
        if (this.timeoutMs <= 0) {
            throw new Error('timeoutMs must be positive');
        }
        if (this.retry.maxAttempts < 1) {
            throw new Error('retry.maxAttempts must be >= 1');
        }
    }

    async health(): Promise<boolean> {
        try {
            const response = await this.rawRequest('GET', '/healthz');
            return response.ok;
        } catch {
            return false;
        }
    }

    async openSession(request: CreateSessionRequest): Promise<SessionHandle> {
        const body = await this.request<CreateSessionResponse>(
            'POST',
            '/v1/sessions',
            request,
        );
        return {
            sessionId: body.session_id,
            systemPrompt: body.system_prompt,
            context: body.initial_context,
            state: 'open',
        };
    }

    /**
     * Submit generated text. On retrieval the injected block is appended
     * to the handle's context (mirroring the server); on terminal or
     * truncated the handle closes.
     */
    async continue_(handle: SessionHandle, text: string): Promise<ContinueResponse> {
        if (handle.state !== 'open') {
            throw new SessionStateError(
                `session ${handle.sessionId} is already closed`,
            );
        }
        const body = await this.request<ContinueResponse>(
            'POST',
            `/v1/sessions/${handle.sessionId}/continue`,
            { text },
        );
        if (body.status === 'retrieval') {
            handle.context += text + body.injected_text;
        } else if (body.status === 'terminal' || body.status === 'truncated') {
            handle.state = 'closed';
        }
        return body;
    }

    async score(
        trajectory: TrajectoryRecord,
        label: number,
        stage?: Stage,
    ): Promise<RewardBreakdown> {
        const request: ScoreRequest = { trajectory, label };
        if (stage !== undefined) {
            request.stage = stage;
        }
        return this.request<RewardBreakdown>('POST', '/v1/score', request);
    }

    async getSession(sessionId: string): Promise<SessionSnapshot> {
        return this.request<SessionSnapshot>('GET', `/v1/sessions/${sessionId}`);
    }

    async getItem(itemId: number): Promise<ItemRecord> {
        return this.request<ItemRecord>('GET', `/v1/items/${itemId}`);
    }

    /** Client-side only: the server reclaims sessions by TTL. */
    close(handle: SessionHandle): void {
        handle.state = 'closed';
    }

    private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
        let lastFailure: unknown;
        for (let attempt = 1; attempt <= this.retry.maxAttempts; attempt++) {
            let response: Response;
            try {
                response = await this.rawRequest(method, path, body);
            } catch (error) {
                // transport-level: retry
                lastFailure = error;
                if (attempt < this.retry.maxAttempts) {
                    await sleep(attempt * this.retry.backoffMs);
                    continue;
                }
                throw new TransportError(
                    `${method} ${path} failed after ${attempt} attempts`,
                    error,
                );
            }
            if (response.status === 503) {
                // retryable per the service contract; 4xx never is
                lastFailure = new ApiError('service at capacity', 503, null);
                if (attempt < this.retry.maxAttempts) {
                    await sleep(attempt * this.retry.backoffMs);
                    continue;
                }
                throw new TransportError(
                    `${method} ${path}: still 503 after ${attempt} attempts`,
                    lastFailure,
                );
            }
            if (!response.ok) {
                const payload = await safeJson(response);
                throw new ApiError(
                    `${method} ${path} -> ${response.status}: ${describe(payload)}`,
                    response.status,
                    payload,
                );
            }
            return (await response.json()) as T;
        }
        throw new TransportError(`${method} ${path}: retries exhausted`, lastFailure);
    }

    private async rawRequest(
        method: string,
        path: string,
        body?: unknown,
    ): Promise<Response> {
        const controller = new AbortController();
        const timer = setTimeout(() => controller.abort(), this.timeoutMs);
        try {
            return await fetch(this.baseUrl + path, {
                method,
                headers: body === undefined ? undefined : { 'Content-Type': 'application/json' },
                body: body === undefined ? undefined : JSON.stringify(body),
                signal: controller.signal,
            });
        } finally {
            clearTimeout(timer);
        }
    }
}

async function safeJson(response: Response): Promise<unknown> {
    try {
        return await response.json();
    } catch {
        return null;
    }
}

function describe(payload: unknown): string {
    if (payload && typeof payload === 'object') {
        const record = payload as Record<string, unknown>;
        if (typeof record.detail === 'string') return record.detail;
        if (typeof record.error === 'string') return record.error;
    }
    return JSON.stringify(payload);
}
