// Wire types for the splatedit service. The shapes mirror /api/meta and
// /api/render exactly; nothing here is interpreted beyond display.

export interface EditMeta {
    id: string;
    label: string;
    region_size: number;
}

export interface CameraState {
    azimuth_deg: number;
    elevation_deg: number;
    radius: number;
    fov_deg: number;
    width: number;
    height: number;
    center: number[];
}

export interface Meta {
    version: number;
    gaussians: number;
    background: number[];
    bounds: { min: number[]; max: number[] };
    camera: CameraState;
    edits: EditMeta[];
}

export interface ControlSetting {
    edit: string;
    u: number;
}

export interface CameraPatch {
    azimuth_deg?: number;
    elevation_deg?: number;
    radius?: number;
}

export interface RenderRequest {
    camera?: CameraPatch;
    controls: ControlSetting[];
}

export const PNG_MAGIC = [0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a];

export function looksLikePng(bytes: Uint8Array): boolean {
    return PNG_MAGIC.every((b, i) => bytes[i] === b);
}

// Stream frames are a little-endian u32 sequence number followed by the PNG.
export function splitStreamFrame(data: ArrayBuffer): { seq: number; png: Uint8Array } {
    if (data.byteLength < 4) throw new Error("stream frame shorter than its header");
    const seq = new DataView(data).getUint32(0, true);
    return { seq, png: new Uint8Array(data, 4) };
}

export async function fetchMeta(baseUrl: string, fetchFn: typeof fetch = fetch): Promise<Meta> {
    const res = await fetchFn(baseUrl + "/api/meta");
    if (!res.ok) throw new Error(`meta request failed: ${res.status}`);
    return (await res.json()) as Meta;
}
