import type { DeepRecClient, SessionHandle } from './client.js';
import type { ContinueResponse, CreateSessionRequest, TerminalResponse } from './types.js';

/** Produces the next generation given the full context so far. */
export type PolicyFn = (context: string) => string | Promise<string>;

export interface EpisodeOutcome {
    handle: SessionHandle;
    result: TerminalResponse;
    steps: ContinueResponse[];
}

/**
 * Drive a local policy callable through a complete episode: open the
 * session, alternate generate/continue until the server reports terminal
 * or truncated, and return the scored outcome.
 */
export async function driveEpisode(
    client: DeepRecClient,
    request: CreateSessionRequest,
    policy: PolicyFn,
    maxSteps = 64,
): Promise<EpisodeOutcome> {
    const handle = await client.openSession(request);
    const steps: ContinueResponse[] = [];
    for (let step = 0; step < maxSteps; step++) {
        const text = await policy(handle.context);
        const response = await client.continue_(handle, text);
        steps.push(response);
        if (response.status === 'terminal' || response.status === 'truncated') {
            return { handle, result: response, steps };
        }
    }
    throw new Error(`episode did not finish within ${maxSteps} steps`);
}
