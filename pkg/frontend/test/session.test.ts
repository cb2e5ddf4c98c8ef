import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { UiSession } from "../src/session.js";
import { fixtureBytes, fixtureMeta, flushMicrotasks, ManualTransport, RecordedServer } from "./helpers.js";

const meta = fixtureMeta();
const EDIT = meta.edits[0]!.id;

beforeEach(() => {
    vi.useFakeTimers();
});

afterEach(() => {
    vi.useRealTimers();
});

describe("request debouncing", () => {
    it("a 20-event drag burst in 100 ms issues at most 3 requests", async () => {
        const server = new RecordedServer();
        const session = new UiSession(meta, server);
        for (let i = 0; i < 20; i++) {
            session.setControl(EDIT, i / 19);
            await vi.advanceTimersByTimeAsync(5);
        }
        await vi.advanceTimersByTimeAsync(200); // let the trailing window flush
        expect(server.log.length).toBeGreaterThanOrEqual(1);
        expect(server.log.length).toBeLessThanOrEqual(3);
        // the last request carries the final slider state, nothing in between
        const last = server.log[server.log.length - 1]!;
        expect(last.controls).toEqual([{ edit: EDIT, u: 1 }]);
    });

    it("keeps at most one request in flight", async () => {
        const transport = new ManualTransport();
        const session = new UiSession(meta, transport);
        session.setControl(EDIT, 0.25);
        await vi.advanceTimersByTimeAsync(200);
        expect(transport.sent.length).toBe(1);
        // changes while waiting must not spawn a second request
        session.setControl(EDIT, 0.5);
        session.setControl(EDIT, 0.75);
        await vi.advanceTimersByTimeAsync(500);
        expect(transport.sent.length).toBe(1);
        transport.sent[0]!.resolve(fixtureBytes("frame_u025.png"));
        await flushMicrotasks();
        expect(transport.sent.length).toBe(2);
        expect(transport.sent[1]!.req.controls).toEqual([{ edit: EDIT, u: 0.75 }]);
    });
});

describe("zero-control identity", () => {
    it("all sliders at 0 shows the original fixture byte-for-byte", async () => {
        const server = new RecordedServer();
        const session = new UiSession(meta, server);
        session.setControl(EDIT, 0.55);
        await vi.advanceTimersByTimeAsync(200);
        expect(session.frame!.bytes).toEqual(fixtureBytes("frame_u055.png"));

        session.setControl(EDIT, 0);
        await vi.advanceTimersByTimeAsync(200);
        const original = fixtureBytes("frame_u000.png");
        expect(session.frame!.bytes.length).toBe(original.length);
        expect(session.frame!.bytes).toEqual(original);
    });
});

describe("acknowledged state", () => {
    it("displayed u lags the slider until the response lands", async () => {
        const transport = new ManualTransport();
        const session = new UiSession(meta, transport);
        session.setControl(EDIT, 0.55);
        await vi.advanceTimersByTimeAsync(100);
        transport.sent[0]!.resolve(fixtureBytes("frame_u055.png"));
        await flushMicrotasks();
        expect(session.acknowledged().get(EDIT)).toBe(0.55);

        session.setControl(EDIT, 1.0);
        await vi.advanceTimersByTimeAsync(100);
        // request for u=1 is still in flight: the frame caption must keep 0.55
        expect(session.sliders.get(EDIT)).toBe(1.0);
        expect(session.acknowledged().get(EDIT)).toBe(0.55);
        transport.sent[1]!.resolve(fixtureBytes("frame_u100.png"));
        await flushMicrotasks();
        expect(session.acknowledged().get(EDIT)).toBe(1.0);
    });

    it("measures round-trip latency on the displayed frame", async () => {
        const transport = new ManualTransport();
        const session = new UiSession(meta, transport);
        session.setControl(EDIT, 0.5);
        await vi.advanceTimersByTimeAsync(10);
        await vi.advanceTimersByTimeAsync(120);
        transport.sent[0]!.resolve(fixtureBytes("frame_u050.png"));
        await flushMicrotasks();
        expect(session.frame!.latencyMs).toBeGreaterThanOrEqual(120);
        expect(session.frame!.latencyMs).toBeLessThan(200);
    });
});

describe("failure handling", () => {
    it("network failure raises the banner and keeps the last good frame", async () => {
        const transport = new ManualTransport();
        const errors: string[] = [];
        let recovered = 0;
        const session = new UiSession(meta, transport, {
            error: (m) => errors.push(m),
            recovered: () => recovered++,
        });

        session.setControl(EDIT, 0.25);
        await vi.advanceTimersByTimeAsync(100);
        const good = fixtureBytes("frame_u025.png");
        transport.sent[0]!.resolve(good);
        await flushMicrotasks();

        session.setControl(EDIT, 0.75);
        await vi.advanceTimersByTimeAsync(100);
        transport.sent[1]!.reject(new Error("connection refused"));
        await flushMicrotasks();
        expect(errors).toEqual(["connection refused"]);
        expect(session.error).toBe("connection refused");
        expect(session.frame!.bytes).toEqual(good); // last good frame retained

        // next successful frame clears the banner
        session.setControl(EDIT, 1.0);
        await vi.advanceTimersByTimeAsync(100);
        transport.sent[2]!.resolve(fixtureBytes("frame_u100.png"));
        await flushMicrotasks();
        expect(session.error).toBeNull();
        expect(recovered).toBe(1);
    });
});
