import { createServer, type Server } from 'node:http';
import type { AddressInfo } from 'node:net';

export interface StubReply {
    status: number;
    body: unknown;
}

export type StubHandler = (
    method: string,
    path: string,
    body: unknown,
) => StubReply;

export interface Stub {
    url: string;
    calls: { method: string; path: string; body: unknown }[];
    close(): Promise<void>;
}

/** Minimal programmable HTTP stub for client tests. */
export async function startStub(handler: StubHandler): Promise<Stub> {
    const calls: Stub['calls'] = [];
    const server: Server = createServer((req, res) => {
        const chunks: Buffer[] = [];
        req.on('data', (chunk) => chunks.push(chunk));
        req.on('end', () => {
            const raw = Buffer.concat(chunks).toString('utf-8');
            const body = raw ? JSON.parse(raw) : undefined;
            calls.push({ method: req.method ?? '', path: req.url ?? '', body });
            const reply = handler(req.method ?? '', req.url ?? '', body);
            const payload = JSON.stringify(reply.body);
            res.writeHead(reply.status, {
                'Content-Type': 'application/json',
                'Content-Length': Buffer.byteLength(payload),
            });
            res.end(payload);
        });
    });
    await new Promise<void>((resolve) => server.listen(0, '127.0.0.1', resolve));
    const { port } = server.address() as AddressInfo;
    return {
        url: `http://127.0.0.1:${port}`,
        calls,
        close: () =>
            new Promise<void>((resolve, reject) =>
                server.close((err) => (err ? reject(err) : resolve())),
            ),
    };
}
