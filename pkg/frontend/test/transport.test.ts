import { describe, expect, it } from "vitest";

import { connectTransport, HttpTransport, WsTransport } from "../src/transport.js";
import { UiSession } from "../src/session.js";
import { fixtureBytes, fixtureMeta, flushMicrotasks, MockSocket } from "./helpers.js";

const meta = fixtureMeta();
const EDIT = meta.edits[0]!.id;

describe("WsTransport", () => {
    it("pairs frames to requests by sequence number", async () => {
        const socket = new MockSocket();
        const ws = new WsTransport(socket);
        const p1 = ws.request(1, { controls: [{ edit: EDIT, u: 0.25 }] });
        const p2 = ws.request(2, { controls: [{ edit: EDIT, u: 0.5 }] });
        expect(socket.outbox.length).toBe(2);
        expect(JSON.parse(socket.outbox[0]!)).toMatchObject({ seq: 1 });

        // responses can land in any order; each finds its own waiter
        socket.deliverFrame(2, fixtureBytes("frame_u050.png"));
        socket.deliverFrame(1, fixtureBytes("frame_u025.png"));
        expect(await p2).toEqual(fixtureBytes("frame_u050.png"));
        expect(await p1).toEqual(fixtureBytes("frame_u025.png"));
    });

    it("drops duplicate and unsolicited frames", async () => {
        const socket = new MockSocket();
        const ws = new WsTransport(socket);
        const p1 = ws.request(1, { controls: [] });
        socket.deliverFrame(1, fixtureBytes("frame_u000.png"));
        expect(await p1).toEqual(fixtureBytes("frame_u000.png"));
        // replay of an already-answered sequence number and a frame nobody
        // asked for: both must be ignored without breaking the stream
        socket.deliverFrame(1, fixtureBytes("frame_u100.png"));
        socket.deliverFrame(99, fixtureBytes("frame_u100.png"));

        const p2 = ws.request(2, { controls: [] });
        socket.deliverFrame(2, fixtureBytes("frame_u000.png"));
        expect(await p2).toEqual(fixtureBytes("frame_u000.png"));
    });

    it("turns error text frames into rejections", async () => {
        const socket = new MockSocket();
        const ws = new WsTransport(socket);
        const p = ws.request(7, { controls: [{ edit: "nope", u: 1 }] });
        socket.deliverError(7, "unknown edit: nope");
        await expect(p).rejects.toThrow("unknown edit: nope");
    });

    it("fails pending requests when the stream dies", async () => {
        const socket = new MockSocket();
        const ws = new WsTransport(socket);
        const p = ws.request(1, { controls: [] });
        socket.onclose?.();
        await expect(p).rejects.toThrow("stream closed");
    });
});

describe("session + stream integration", () => {
    it("a frame for a superseded request never replaces a newer one", async () => {
        const socket = new MockSocket();
        const session = new UiSession(meta, new WsTransport(socket), {}, { debounceMs: 0 });

        session.setControl(EDIT, 0.55);
        expect(socket.outbox.length).toBe(1);
        session.setControl(EDIT, 1.0); // queued behind the in-flight request

        socket.deliverFrame(1, fixtureBytes("frame_u055.png"));
        await flushMicrotasks();
        expect(session.frame!.bytes).toEqual(fixtureBytes("frame_u055.png"));
        expect(socket.outbox.length).toBe(2); // queued change went out

        socket.deliverFrame(2, fixtureBytes("frame_u100.png"));
        await flushMicrotasks();
        expect(session.frame!.seq).toBe(2);

        // late replay of the older frame: screen must stay on the newer one
        socket.deliverFrame(1, fixtureBytes("frame_u055.png"));
        await flushMicrotasks();
        expect(session.frame!.seq).toBe(2);
        expect(session.frame!.bytes).toEqual(fixtureBytes("frame_u100.png"));
    });
});

describe("HttpTransport", () => {
    function fakeFetch(status: number, body: Uint8Array) {
        const calls: { url: string; init: RequestInit }[] = [];
        const fetchFn = (async (url: string, init: RequestInit) => {
            calls.push({ url, init });
            return {
                ok: status === 200,
                status,
                arrayBuffer: async () => body.buffer.slice(body.byteOffset, body.byteOffset + body.byteLength),
            };
        }) as unknown as typeof fetch;
        return { fetchFn, calls };
    }

    it("posts the render request and returns the body", async () => {
        const png = fixtureBytes("frame_u025.png");
        const { fetchFn, calls } = fakeFetch(200, png);
        const http = new HttpTransport("http://svc", fetchFn);
        const out = await http.request(3, { controls: [{ edit: EDIT, u: 0.25 }] });
        expect(out).toEqual(png);
        expect(calls[0]!.url).toBe("http://svc/api/render");
        expect(JSON.parse(calls[0]!.init.body as string)).toEqual(
            { controls: [{ edit: EDIT, u: 0.25 }] });
    });

    it("rejects on a non-200 response", async () => {
        const { fetchFn } = fakeFetch(404, new Uint8Array());
        const http = new HttpTransport("http://svc", fetchFn);
        await expect(http.request(1, { controls: [] })).rejects.toThrow("404");
    });
});

describe("connectTransport", () => {
    it("prefers the stream when the socket opens", async () => {
        const socket = new MockSocket();
        const promise = connectTransport("http://svc", { wsFactory: () => socket });
        socket.onopen?.();
        const transport = await promise;
        expect(transport.kind).toBe("ws");
    });

    it("falls back to http when the socket errors out", async () => {
        const socket = new MockSocket();
        const promise = connectTransport("http://svc", { wsFactory: () => socket });
        socket.onerror?.();
        const transport = await promise;
        expect(transport.kind).toBe("http");
    });

    it("falls back to http when the socket cannot even be constructed", async () => {
        const transport = await connectTransport("http://svc", {
            wsFactory: () => {
                throw new Error("no websocket here");
            },
        });
        expect(transport.kind).toBe("http");
    });
});
