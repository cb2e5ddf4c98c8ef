import { controlToSlider, sliderToControl } from "./control.js";
import { fetchMeta, looksLikePng, Meta } from "./protocol.js";
import { FrameView, UiSession } from "./session.js";
import { connectTransport, HttpTransport } from "./transport.js";

function el<K extends keyof HTMLElementTagNameMap>(tag: K, cls?: string): HTMLElementTagNameMap[K] {
    const node = document.createElement(tag);
    if (cls) node.className = cls;
    return node;
}

function pngUrl(bytes: Uint8Array): string {
    return URL.createObjectURL(new Blob([new Uint8Array(bytes)], { type: "image/png" }));
}

function showFrame(img: HTMLImageElement, bytes: Uint8Array): void {
    if (!looksLikePng(bytes)) return;
    const old = img.src;
    img.src = pngUrl(bytes);
    if (old.startsWith("blob:")) URL.revokeObjectURL(old);
}

function sliderRow(labelText: string, initial: number, onInput: (raw: number) => void): HTMLElement {
    const row = el("div", "slider-row");
    const label = el("label");
    label.textContent = labelText;
    const input = el("input");
    input.type = "range";
    input.min = "0";
    input.max = "1000";
    input.step = "1";
    input.value = String(initial);
    const readout = el("span", "readout");
    readout.textContent = (initial / 1000).toFixed(2);
    input.addEventListener("input", () => {
        const raw = Number(input.value);
        readout.textContent = (raw / 1000).toFixed(2);
        onInput(raw);
    });
    row.append(label, input, readout);
    return row;
}

async function boot(): Promise<void> {
    const root = document.getElementById("app");
    if (!root) throw new Error("missing #app mount point");
    const baseUrl = location.origin;

    const meta: Meta = await fetchMeta(baseUrl);
    const httpOnly = new HttpTransport(baseUrl);

    // the comparison pane: one untouched render, fetched once
    const original = await httpOnly.request(0, { controls: [] });

    const banner = el("div", "banner");
    banner.hidden = true;
    const status = el("div", "status");
    const panes = el("div", "panes");
    const originalPane = el("figure");
    const originalImg = el("img");
    const editedPane = el("figure");
    const editedImg = el("img");
    const capOriginal = el("figcaption");
    capOriginal.textContent = "original";
    const capEdited = el("figcaption");
    capEdited.textContent = "edited";
    originalPane.append(originalImg, capOriginal);
    editedPane.append(editedImg, capEdited);
    panes.append(originalPane, editedPane);
    const controlsBox = el("div", "controls");

    root.append(banner, panes, controlsBox, status);
    showFrame(originalImg, original);
    showFrame(editedImg, original); // all sliders start at 0

    const transport = await connectTransport(baseUrl);
    const session = new UiSession(meta, transport, {
        frame: (view: FrameView) => {
            showFrame(editedImg, view.bytes);
            const shown = [...session.acknowledged()]
                .map(([id, u]) => `${id}=${u.toFixed(2)}`)
                .join(" ");
            status.textContent =
                `${transport.kind} · ${view.latencyMs.toFixed(0)} ms · ${shown}`;
        },
        error: (message: string) => {
            banner.textContent = `render failed: ${message} — showing last good frame`;
            banner.hidden = false;
        },
        recovered: () => {
            banner.hidden = true;
        },
    });

    for (const edit of meta.edits) {
        controlsBox.append(sliderRow(
            `${edit.label} (${edit.region_size} gaussians)`,
            0,
            (raw) => session.setControl(edit.id, sliderToControl(raw)),
        ));
    }

    const cam = meta.camera;
    controlsBox.append(sliderRow("azimuth", controlToSlider(cam.azimuth_deg / 360), (raw) => {
        session.setCamera({ azimuth_deg: (raw / 1000) * 360 });
    }));
    controlsBox.append(sliderRow("elevation", controlToSlider((cam.elevation_deg + 90) / 180), (raw) => {
        session.setCamera({ elevation_deg: (raw / 1000) * 180 - 90 });
    }));
    // radius slider spans 0..4x the rig default, starting at 1x (raw 250)
    controlsBox.append(sliderRow("radius", 250, (raw) => {
        session.setCamera({ radius: Math.max(0.1, (raw / 1000) * 4 * cam.radius) });
    }));

    window.addEventListener("beforeunload", () => session.close());
}

boot().catch((err) => {
    const root = document.getElementById("app");
    if (root) root.textContent = `failed to start: ${err instanceof Error ? err.message : err}`;
});
