/**
 * Frozen image encoders. The built-in family is fully deterministic and
 * locally computable: resize -> normalize -> patch-mean pooling -> a fixed
 * projection whose weights are derived from the encoder identifier, so the
 * same identifier always produces bit-identical features. The identifier and
 * output width are recorded in the manifest.
 */

import { GrayImage, resizeBilinear } from './image';

export interface Encoder {
  id: string;
  inputSize: number; // images are resized to inputSize x inputSize
  patchGrid: number; // pooled to patchGrid x patchGrid means
  dim: number; // output feature width
  mean: number; // normalization statistics
  std: number;
  encode(img: GrayImage): Float64Array;
}

/** splitmix64 over a seed hashed from the encoder id: portable and stable. */
function seededUnit(seedState: { s: bigint }): number {
  seedState.s = (seedState.s + 0x9e3779b97f4a7c15n) & 0xffffffffffffffffn;
  let z = seedState.s;
  z = ((z ^ (z >> 30n)) * 0xbf58476d1ce4e5b9n) & 0xffffffffffffffffn;
  z = ((z ^ (z >> 27n)) * 0x94d049bb133111ebn) & 0xffffffffffffffffn;
  z = z ^ (z >> 31n);
  // top 53 bits -> double in [0, 1)
  return Number(z >> 11n) / 9007199254740992.0;
}

function fnv1a64(text: string): bigint {
  let hash = 0xcbf29ce484222325n;
  for (const ch of Buffer.from(text, 'utf-8')) {
    hash = (hash ^ BigInt(ch)) * 0x100000001b3n;
    hash &= 0xffffffffffffffffn;
  }
  return hash;
}

function buildPatchProjectionEncoder(
  id: string,
  inputSize: number,
  patchGrid: number,
  dim: number,
): Encoder {
  const pooled = patchGrid * patchGrid;
  const seedState = { s: fnv1a64(id) };
  // fixed gaussian-ish projection via the central limit of 12 uniforms
  const weights = new Float64Array(dim * pooled);
  for (let i = 0; i < weights.length; i++) {
    let acc = 0;
    for (let k = 0; k < 12; k++) acc += seededUnit(seedState);
    weights[i] = (acc - 6.0) / Math.sqrt(pooled);
  }
  const mean = 0.5;
  const std = 0.25;
  return {
    id,
    inputSize,
    patchGrid,
    dim,
    mean,
    std,
    encode(img: GrayImage): Float64Array {
      const resized = resizeBilinear(img, inputSize, inputSize);
      const patch = inputSize / patchGrid;
      const pooledValues = new Float64Array(pooled);
      for (let py = 0; py < patchGrid; py++) {
        for (let px = 0; px < patchGrid; px++) {
          let acc = 0;
          for (let y = py * patch; y < (py + 1) * patch; y++) {
            for (let x = px * patch; x < (px + 1) * patch; x++) {
              acc += resized.pixels[y * inputSize + x];
            }
          }
          pooledValues[py * patchGrid + px] = (acc / (patch * patch) - mean) / std;
        }
      }
      const out = new Float64Array(dim);
      for (let j = 0; j < dim; j++) {
        let acc = 0;
        const base = j * pooled;
        for (let k = 0; k < pooled; k++) acc += weights[base + k] * pooledValues[k];
        out[j] = acc;
      }
      return out;
    },
  };
}

const REGISTRY: Record<string, () => Encoder> = {
  'patchproj-64-d128': () => buildPatchProjectionEncoder('patchproj-64-d128', 64, 8, 128),
  'patchproj-32-d64': () => buildPatchProjectionEncoder('patchproj-32-d64', 32, 8, 64),
};

export function knownEncoders(): string[] {
  return Object.keys(REGISTRY).sort();
}

export function getEncoder(id: string): Encoder {
  const build = REGISTRY[id];
  if (!build) {
    throw new Error(`unknown encoder '${id}'; available: ${knownEncoders().join(', ')}`);
  }
  return build();
}
