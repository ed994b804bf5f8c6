// Conformance against the real Python service: spawns `deeprec serve`
// over the fixture corpus and replays the recorded session through it.

import { spawn, type ChildProcess } from 'node:child_process';
import { readFileSync } from 'node:fs';
import { fileURLToPath } from 'node:url';
import { afterAll, beforeAll, describe, expect, it } from 'vitest';

import { DeepRecClient, driveEpisode } from '../src/index.js';

const fixturesDir = fileURLToPath(new URL('./fixtures', import.meta.url));
const repoRoot = fileURLToPath(new URL('../..', import.meta.url));

const fixture = JSON.parse(
    readFileSync(new URL('./fixtures/session.json', import.meta.url), 'utf-8'),
);

const PORT = 18700 + (process.pid % 900);
const BASE_URL = `http://127.0.0.1:${PORT}`;

let server: ChildProcess | undefined;

async function waitForHealthy(client: DeepRecClient, timeoutMs = 20_000): Promise<void> {
    const deadline = Date.now() + timeoutMs;
    while (Date.now() < deadline) {
        if (await client.health()) return;
        await new Promise((resolve) => setTimeout(resolve, 200));
    }
    throw new Error(`service did not become healthy on ${BASE_URL}`);
}

beforeAll(async () => {
    server = spawn(
        'python3',
        [
            '-m', 'deeprec.cli', 'serve',
            '--items', `${fixturesDir}/corpus/items.jsonl`,
            '--collab', `${fixturesDir}/corpus/collab.drec`,
            '--text', `${fixturesDir}/corpus/text.drec`,
            '--stage', 'recommendation',
            '--port', String(PORT),
        ],
        { cwd: repoRoot, stdio: ['ignore', 'pipe', 'pipe'] },
    );
    const client = new DeepRecClient({ baseUrl: BASE_URL, timeoutMs: 5_000 });
    await waitForHealthy(client);
}, 30_000);

afterAll(() => {
    server?.kill('SIGTERM');
});

describe('live service conformance', () => {
    it('full session matches the in-process reference field-for-field', async () => {
        const client = new DeepRecClient({ baseUrl: BASE_URL });
        const texts = fixture.exchanges
            .filter((e: { endpoint: string }) => e.endpoint === 'continue')
            .map((e: { request: { text: string } }) => e.request.text);
        let cursor = 0;
        const outcome = await driveEpisode(
            client,
            { history: [], label: fixture.label, user_id: 'sdk-user' },
            () => texts[cursor++],
        );
        expect(outcome.result.status).toBe('terminal');
        expect(outcome.result.trajectory).toEqual(fixture.reference.trajectory);
        expect(outcome.result.report).toEqual(fixture.reference.report);
        expect(outcome.result.rewards).toEqual(fixture.reference.rewards);
    });

    it('score via SDK equals the CLI score output', async () => {
        const client = new DeepRecClient({ baseUrl: BASE_URL });
        const breakdown = await client.score(
            fixture.reference.trajectory,
            fixture.label,
            'recommendation',
        );
        expect(breakdown).toEqual(fixture.cli_score);
    });

    it('session snapshot reflects one injection', async () => {
        const client = new DeepRecClient({ baseUrl: BASE_URL });
        const handle = await client.openSession({ history: [], label: fixture.label });
        const firstText = fixture.exchanges.find(
            (e: { endpoint: string }) => e.endpoint === 'continue',
        ).request.text;
        const response = await client.continue_(handle, firstText);
        expect(response.status).toBe('retrieval');
        const snapshot = await client.getSession(handle.sessionId);
        expect(snapshot.m).toBe(1);
        expect(snapshot.state).toBe('AwaitingGeneration');
    });

    it('item lookup returns the catalog title verbatim', async () => {
        const client = new DeepRecClient({ baseUrl: BASE_URL });
        const item = await client.getItem(7);
        expect(item.title).toBe('Fixture Game 07');
    });
});
