import { clamp01 } from "./control.js";
import { CameraPatch, ControlSetting, Meta, RenderRequest } from "./protocol.js";
import { Transport } from "./transport.js";

export interface FrameView {
    bytes: Uint8Array;
    seq: number;
    latencyMs: number;
    // exactly what was sent with the request this frame answered
    controls: ControlSetting[];
}

export interface SessionEvents {
    frame?: (view: FrameView) => void;
    error?: (message: string) => void;
    // fired when a previous error cleared
    recovered?: () => void;
}

const DEBOUNCE_MS = 50;

// Holds the user-facing state and rations requests: slider drags are bursty,
// so changes are coalesced to at most one request per debounce window, with
// at most one request in flight. Responses are matched by sequence number
// and anything older than what is already on screen is dropped.
export class UiSession {
    readonly meta: Meta;
    readonly sliders = new Map<string, number>();
    camera: CameraPatch = {};

    frame: FrameView | null = null;
    error: string | null = null;

    private transport: Transport;
    private debounceMs: number;
    private now: () => number;
    private events: SessionEvents;

    private lastSeq = 0;
    private shownSeq = 0;
    private inFlight: number | null = null;
    private lastSendAt = -Infinity;
    private dirty = false;
    private timer: ReturnType<typeof setTimeout> | null = null;
    private sendTimes = new Map<number, number>();
    private sentControls = new Map<number, ControlSetting[]>();

    constructor(meta: Meta, transport: Transport, events: SessionEvents = {},
                opts: { debounceMs?: number; now?: () => number } = {}) {
        this.meta = meta;
        this.transport = transport;
        this.events = events;
        this.debounceMs = opts.debounceMs ?? DEBOUNCE_MS;
        this.now = opts.now ?? Date.now;
        for (const e of meta.edits) this.sliders.set(e.id, 0);
    }

    setControl(editId: string, u: number): void {
        if (!this.sliders.has(editId)) throw new Error(`unknown edit: ${editId}`);
        this.sliders.set(editId, clamp01(u));
        this.touch();
    }

    setCamera(patch: CameraPatch): void {
        this.camera = { ...this.camera, ...patch };
        this.touch();
    }

    // u values of the latest acknowledged request — what the frame on screen
    // actually shows, which can lag the slider positions during a drag
    acknowledged(): Map<string, number> {
        const out = new Map<string, number>();
        for (const c of this.frame?.controls ?? []) out.set(c.edit, c.u);
        return out;
    }

    buildRequest(): RenderRequest {
        const controls: ControlSetting[] = [];
        for (const [edit, u] of this.sliders) controls.push({ edit, u });
        const req: RenderRequest = { controls };
        if (Object.keys(this.camera).length > 0) req.camera = this.camera;
        return req;
    }

    close(): void {
        if (this.timer !== null) clearTimeout(this.timer);
        this.timer = null;
        this.transport.close();
    }

    private touch(): void {
        this.dirty = true;
        this.maybeSend();
    }

    private maybeSend(): void {
        if (!this.dirty || this.inFlight !== null) return;
        const wait = this.lastSendAt + this.debounceMs - this.now();
        if (wait <= 0) {
            this.sendNow();
        } else if (this.timer === null) {
            this.timer = setTimeout(() => {
                this.timer = null;
                this.maybeSend();
            }, wait);
        }
    }

    private sendNow(): void {
        this.dirty = false;
        const seq = ++this.lastSeq;
        const req = this.buildRequest();
        this.inFlight = seq;
        this.lastSendAt = this.now();
        this.sendTimes.set(seq, this.lastSendAt);
        this.sentControls.set(seq, req.controls);
        this.transport.request(seq, req).then(
            (bytes) => this.onFrame(seq, bytes),
            (err) => this.onError(seq, err),
        );
    }

    private onFrame(seq: number, bytes: Uint8Array): void {
        if (this.inFlight === seq) this.inFlight = null;
        const sentAt = this.sendTimes.get(seq);
        const controls = this.sentControls.get(seq);
        this.sendTimes.delete(seq);
        this.sentControls.delete(seq);
        if (seq > this.shownSeq && sentAt !== undefined && controls !== undefined) {
            this.shownSeq = seq;
            this.frame = { bytes, seq, latencyMs: this.now() - sentAt, controls };
            if (this.error !== null) {
                this.error = null;
                this.events.recovered?.();
            }
            this.events.frame?.(this.frame);
        }
        this.maybeSend();
    }

    private onError(seq: number, err: unknown): void {
        if (this.inFlight === seq) this.inFlight = null;
        this.sendTimes.delete(seq);
        this.sentControls.delete(seq);
        this.error = err instanceof Error ? err.message : String(err);
        this.events.error?.(this.error);
        this.maybeSend();
    }
}
