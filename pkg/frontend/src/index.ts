export {
    ApiError,
    DeepRecClient,
    SessionStateError,
    TransportError,
} from './client.js';
export type { ClientConfig, RetryPolicy, SessionHandle } from './client.js';
export { driveEpisode } from './episode.js';
export type { EpisodeOutcome, PolicyFn } from './episode.js';
export type {
    ContinueResponse,
    CreateSessionRequest,
    CreateSessionResponse,
    FormatReportRecord,
    IncompleteResponse,
    ItemRecord,
    RetrievalResponse,
    RetrievedItem,
    RewardBreakdown,
    ScoreRequest,
    SessionConfigOverrides,
    SessionSnapshot,
    Stage,
    TerminalResponse,
    TrajectoryRecord,
    TurnRecord,
} from './types.js';
