// Slider widgets report integer positions 0..1000; the service wants u in [0,1].

export function clamp01(u: number): number {
    if (Number.isNaN(u)) return 0;
    return Math.min(1, Math.max(0, u));
}

export function sliderToControl(rawSliderPos: number): number {
    return clamp01(rawSliderPos / 1000);
}

export function controlToSlider(u: number): number {
    return Math.round(clamp01(u) * 1000);
}
