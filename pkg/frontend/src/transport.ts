import { RenderRequest, splitStreamFrame } from "./protocol.js";

// One frame request on the wire. HTTP pairs request and response through the
// fetch promise; the stream transport pairs them through the echoed sequence
// number, so a frame for a request nobody is waiting on anymore is dropped
// right here.
export interface Transport {
    readonly kind: "ws" | "http";
    request(seq: number, req: RenderRequest): Promise<Uint8Array>;
    close(): void;
}

export class HttpTransport implements Transport {
    readonly kind = "http";

    constructor(private baseUrl: string, private fetchFn: typeof fetch = fetch) {}

    async request(_seq: number, req: RenderRequest): Promise<Uint8Array> {
        const res = await this.fetchFn(this.baseUrl + "/api/render", {
            method: "POST",
            headers: { "content-type": "application/json" },
            body: JSON.stringify(req),
        });
        if (!res.ok) throw new Error(`render failed: ${res.status}`);
        return new Uint8Array(await res.arrayBuffer());
    }

    close(): void {}
}

// The subset of WebSocket the stream transport touches, so tests can hand in
// a scripted socket.
export interface SocketLike {
    binaryType: string;
    onmessage: ((ev: { data: unknown }) => void) | null;
    onclose: ((ev?: unknown) => void) | null;
    onerror: ((ev?: unknown) => void) | null;
    onopen: ((ev?: unknown) => void) | null;
    send(data: string): void;
    close(): void;
}

interface Waiter {
    resolve(png: Uint8Array): void;
    reject(err: Error): void;
}

export class WsTransport implements Transport {
    readonly kind = "ws";
    private pending = new Map<number, Waiter>();

    constructor(private socket: SocketLike) {
        socket.binaryType = "arraybuffer";
        socket.onmessage = (ev) => this.onMessage(ev.data);
        socket.onclose = () => this.failAll("stream closed");
        socket.onerror = () => this.failAll("stream error");
    }

    request(seq: number, req: RenderRequest): Promise<Uint8Array> {
        return new Promise((resolve, reject) => {
            this.pending.set(seq, { resolve, reject });
            try {
                this.socket.send(JSON.stringify({ seq, ...req }));
            } catch (err) {
                this.pending.delete(seq);
                reject(err instanceof Error ? err : new Error(String(err)));
            }
        });
    }

    close(): void {
        this.socket.onclose = null;
        this.socket.close();
        this.failAll("stream closed");
    }

    private onMessage(data: unknown): void {
        if (typeof data === "string") {
            // the service reports per-request errors as JSON text frames
            let doc: { seq?: number; error?: string };
            try {
                doc = JSON.parse(data);
            } catch {
                return;
            }
            const waiter = this.pending.get(doc.seq ?? -1);
            if (waiter) {
                this.pending.delete(doc.seq!);
                waiter.reject(new Error(doc.error ?? "render failed"));
            }
            return;
        }
        if (!(data instanceof ArrayBuffer)) return;
        const { seq, png } = splitStreamFrame(data);
        const waiter = this.pending.get(seq);
        if (!waiter) return; // stale or duplicate frame: nobody wants it
        this.pending.delete(seq);
        waiter.resolve(png);
    }

    private failAll(reason: string): void {
        const waiters = [...this.pending.values()];
        this.pending.clear();
        for (const w of waiters) w.reject(new Error(reason));
    }
}

export interface ConnectOptions {
    fetchFn?: typeof fetch;
    wsFactory?: (url: string) => SocketLike;
    openTimeoutMs?: number;
}

function defaultWsFactory(url: string): SocketLike {
    return new WebSocket(url) as unknown as SocketLike;
}

// Prefer the stream; fall back to plain HTTP when the socket refuses to open.
export function connectTransport(baseUrl: string, opts: ConnectOptions = {}): Promise<Transport> {
    const wsUrl = baseUrl.replace(/^http/, "ws") + "/api/stream";
    const factory = opts.wsFactory ?? defaultWsFactory;
    const timeoutMs = opts.openTimeoutMs ?? 3000;

    return new Promise<Transport>((resolve) => {
        const fallback = () => resolve(new HttpTransport(baseUrl, opts.fetchFn));
        let socket: SocketLike;
        try {
            socket = factory(wsUrl);
        } catch {
            fallback();
            return;
        }
        const timer = setTimeout(() => {
            socket.onopen = socket.onerror = socket.onclose = null;
            try {
                socket.close();
            } catch {
                /* already dead */
            }
            fallback();
        }, timeoutMs);
        socket.onopen = () => {
            clearTimeout(timer);
            resolve(new WsTransport(socket));
        };
        socket.onerror = socket.onclose = () => {
            clearTimeout(timer);
            fallback();
        };
    });
}
