import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

import { Meta, RenderRequest } from "../src/protocol.js";
import { SocketLike, Transport } from "../src/transport.js";

const FIXTURES = join(dirname(fileURLToPath(import.meta.url)), "fixtures");

export function fixtureBytes(name: string): Uint8Array {
    return new Uint8Array(readFileSync(join(FIXTURES, name)));
}

export function fixtureMeta(): Meta {
    return JSON.parse(readFileSync(join(FIXTURES, "meta.json"), "utf-8")) as Meta;
}

// u values (x100) the recorder captured
const RECORDED = [0, 25, 50, 55, 75, 100];

// Mock server replaying recorded responses. Mirrors the real service's
// zero-drop rule (controls at u=0 act like absent controls) and answers with
// the nearest recorded frame. Every request is logged for assertions.
export class RecordedServer implements Transport {
    readonly kind = "http";
    log: RenderRequest[] = [];

    request(_seq: number, req: RenderRequest): Promise<Uint8Array> {
        this.log.push(structuredClone(req));
        return Promise.resolve(this.lookup(req));
    }

    close(): void {}

    lookup(req: RenderRequest): Uint8Array {
        const active = req.controls.filter((c) => c.u > 0);
        if (active.length > 1) throw new Error("recorded session has one edit");
        const key = active.length === 0 ? 0 : Math.round(active[0]!.u * 100);
        let best = RECORDED[0]!;
        for (const r of RECORDED) {
            if (Math.abs(r - key) < Math.abs(best - key)) best = r;
        }
        return fixtureBytes(`frame_u${String(best).padStart(3, "0")}.png`);
    }
}

interface Sent {
    seq: number;
    req: RenderRequest;
    resolve: (bytes: Uint8Array) => void;
    reject: (err: Error) => void;
}

// Transport whose responses the test settles by hand.
export class ManualTransport implements Transport {
    readonly kind = "http";
    sent: Sent[] = [];

    request(seq: number, req: RenderRequest): Promise<Uint8Array> {
        return new Promise((resolve, reject) => {
            this.sent.push({ seq, req: structuredClone(req), resolve, reject });
        });
    }

    close(): void {}
}

// Scripted WebSocket stand-in for the stream transport.
export class MockSocket implements SocketLike {
    binaryType = "blob";
    onmessage: ((ev: { data: unknown }) => void) | null = null;
    onclose: ((ev?: unknown) => void) | null = null;
    onerror: ((ev?: unknown) => void) | null = null;
    onopen: ((ev?: unknown) => void) | null = null;
    outbox: string[] = [];
    closed = false;

    send(data: string): void {
        this.outbox.push(data);
    }

    close(): void {
        this.closed = true;
    }

    deliverFrame(seq: number, png: Uint8Array): void {
        const buf = new ArrayBuffer(4 + png.length);
        new DataView(buf).setUint32(0, seq, true);
        new Uint8Array(buf, 4).set(png);
        this.onmessage?.({ data: buf });
    }

    deliverError(seq: number, error: string): void {
        this.onmessage?.({ data: JSON.stringify({ seq, error }) });
    }
}

export async function flushMicrotasks(): Promise<void> {
    await Promise.resolve();
    await Promise.resolve();
}
