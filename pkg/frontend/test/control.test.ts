import { describe, expect, it } from "vitest";

import { clamp01, controlToSlider, sliderToControl } from "../src/control.js";

describe("sliderToControl", () => {
    it("maps the endpoints", () => {
        expect(sliderToControl(0)).toBe(0.0);
        expect(sliderToControl(1000)).toBe(1.0);
    });

    it("is the linear map raw/1000", () => {
        expect(sliderToControl(550)).toBe(0.55);
        expect(sliderToControl(250)).toBe(0.25);
    });

    it("clamps out-of-range positions", () => {
        expect(sliderToControl(-40)).toBe(0.0);
        expect(sliderToControl(1400)).toBe(1.0);
    });
});

describe("clamp01", () => {
    it("handles non-finite input", () => {
        expect(clamp01(Number.NaN)).toBe(0);
        expect(clamp01(Infinity)).toBe(1);
        expect(clamp01(-Infinity)).toBe(0);
    });
});

describe("controlToSlider", () => {
    it("round-trips recorded slider stops", () => {
        for (const raw of [0, 250, 550, 1000]) {
            expect(controlToSlider(sliderToControl(raw))).toBe(raw);
        }
    });
});
