import { describe, expect, it } from 'vitest';

import { getEncoder, knownEncoders } from '../src/encoder';
import { GrayImage, resizeBilinear } from '../src/image';

function noiseImage(width: number, height: number, seed: number): GrayImage {
  // tiny LCG so the test image is stable without extra deps
  let state = seed >>> 0;
  const pixels = new Float64Array(width * height);
  for (let i = 0; i < pixels.length; i++) {
    state = (1664525 * state + 1013904223) >>> 0;
    pixels[i] = state / 2 ** 32;
  }
  return { width, height, pixels };
}

describe('resizeBilinear', () => {
  it('keeps constant images constant', () => {
    const img: GrayImage = { width: 5, height: 7, pixels: new Float64Array(35).fill(0.4) };
    const out = resizeBilinear(img, 16, 16);
    for (const v of out.pixels) expect(v).toBeCloseTo(0.4, 12);
  });

  it('interpolates between neighbors', () => {
    const img: GrayImage = { width: 2, height: 1, pixels: Float64Array.from([0, 1]) };
    const out = resizeBilinear(img, 4, 1);
    expect(out.pixels[0]).toBeLessThan(out.pixels[3]);
    for (const v of out.pixels) {
      expect(v).toBeGreaterThanOrEqual(0);
      expect(v).toBeLessThanOrEqual(1);
    }
  });
});

describe('patch projection encoders', () => {
  it('registry lists the built-ins', () => {
    expect(knownEncoders()).toContain('patchproj-64-d128');
    expect(() => getEncoder('resnet-50')).toThrow(/unknown encoder/);
  });

  it('produces the advertised width and finite values', () => {
    const enc = getEncoder('patchproj-64-d128');
    const out = enc.encode(noiseImage(100, 80, 7));
    expect(out.length).toBe(enc.dim);
    expect(enc.dim).toBe(128);
    for (const v of out) expect(Number.isFinite(v)).toBe(true);
  });

  it('is deterministic across instances and calls', () => {
    const img = noiseImage(50, 60, 11);
    const a = getEncoder('patchproj-64-d128').encode(img);
    const b = getEncoder('patchproj-64-d128').encode(img);
    expect(Array.from(a)).toEqual(Array.from(b));
  });

  it('different identifiers give different projections', () => {
    const img = noiseImage(64, 64, 3);
    const a = getEncoder('patchproj-64-d128').encode(img);
    const b = getEncoder('patchproj-32-d64').encode(img);
    expect(b.length).toBe(64);
    expect(a[0]).not.toBe(b[0]);
  });

  it('distinguishes bright from dark images', () => {
    const bright: GrayImage = { width: 32, height: 32, pixels: new Float64Array(1024).fill(0.9) };
    const dark: GrayImage = { width: 32, height: 32, pixels: new Float64Array(1024).fill(0.1) };
    const enc = getEncoder('patchproj-64-d128');
    const a = enc.encode(bright);
    const b = enc.encode(dark);
    let diff = 0;
    for (let i = 0; i < a.length; i++) diff += Math.abs(a[i] - b[i]);
    expect(diff).toBeGreaterThan(1.0);
  });
});
