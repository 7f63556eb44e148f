/**
 * Minimal image loading for the exporter: PNG (via pngjs) and the PNM family
 * (P2/P5 grayscale, P3/P6 RGB). Everything becomes a grayscale intensity map
 * in [0, 1]; resizing is plain bilinear (the eval-time path: resize only).
 */

import * as fs from 'fs';

import { PNG } from 'pngjs';

export interface GrayImage {
  width: number;
  height: number;
  pixels: Float64Array; // row-major, [0, 1]
}

const LUMA = { r: 0.299, g: 0.587, b: 0.114 };

export function decodeImage(filePath: string): GrayImage {
  const buf = fs.readFileSync(filePath);
  if (buf.length >= 8 && buf.readUInt32BE(0) === 0x89504e47) {
    return decodePng(buf);
  }
  const magic = buf.subarray(0, 2).toString('ascii');
  if (magic === 'P2' || magic === 'P3' || magic === 'P5' || magic === 'P6') {
    return decodePnm(buf, magic);
  }
  throw new Error(`${filePath}: unsupported image format`);
}

function decodePng(buf: Buffer): GrayImage {
  const png = PNG.sync.read(buf);
  const pixels = new Float64Array(png.width * png.height);
  for (let i = 0; i < pixels.length; i++) {
    const o = i * 4;
    pixels[i] =
      (LUMA.r * png.data[o] + LUMA.g * png.data[o + 1] + LUMA.b * png.data[o + 2]) / 255.0;
  }
  return { width: png.width, height: png.height, pixels };
}

function decodePnm(buf: Buffer, magic: string): GrayImage {
  let pos = 2;
  const readToken = (): string => {
    // skip whitespace and '#' comments between header tokens
    while (pos < buf.length) {
      const ch = buf[pos];
      if (ch === 0x23) {
        while (pos < buf.length && buf[pos] !== 0x0a) pos++;
      } else if (ch === 0x20 || ch === 0x09 || ch === 0x0a || ch === 0x0d) {
        pos++;
      } else {
        break;
      }
    }
    const start = pos;
    while (pos < buf.length && !/\s/.test(String.fromCharCode(buf[pos]))) pos++;
    if (start === pos) throw new Error('truncated PNM header');
    return buf.subarray(start, pos).toString('ascii');
  };
  const width = parseInt(readToken(), 10);
  const height = parseInt(readToken(), 10);
  const maxval = parseInt(readToken(), 10);
  if (!(width > 0 && height > 0)) throw new Error('invalid PNM dimensions');
  if (!(maxval > 0 && maxval <= 255)) throw new Error(`unsupported PNM maxval ${maxval}`);
  const channels = magic === 'P3' || magic === 'P6' ? 3 : 1;
  const count = width * height * channels;
  const values = new Float64Array(count);
  if (magic === 'P5' || magic === 'P6') {
    pos += 1; // single whitespace after maxval
    if (buf.length - pos < count) throw new Error('truncated PNM payload');
    for (let i = 0; i < count; i++) values[i] = buf[pos + i];
  } else {
    for (let i = 0; i < count; i++) values[i] = parseInt(readToken(), 10);
  }
  const pixels = new Float64Array(width * height);
  for (let i = 0; i < pixels.length; i++) {
    if (channels === 1) {
      pixels[i] = values[i] / maxval;
    } else {
      const o = i * 3;
      pixels[i] = (LUMA.r * values[o] + LUMA.g * values[o + 1] + LUMA.b * values[o + 2]) / maxval;
    }
  }
  return { width, height, pixels };
}

export function resizeBilinear(img: GrayImage, width: number, height: number): GrayImage {
  if (img.width === width && img.height === height) return img;
  const out = new Float64Array(width * height);
  const sx = img.width / width;
  const sy = img.height / height;
  for (let y = 0; y < height; y++) {
    const fy = Math.min((y + 0.5) * sy - 0.5, img.height - 1);
    const y0 = Math.max(Math.floor(fy), 0);
    const y1 = Math.min(y0 + 1, img.height - 1);
    const wy = Math.max(fy - y0, 0);
    for (let x = 0; x < width; x++) {
      const fx = Math.min((x + 0.5) * sx - 0.5, img.width - 1);
      const x0 = Math.max(Math.floor(fx), 0);
      const x1 = Math.min(x0 + 1, img.width - 1);
      const wx = Math.max(fx - x0, 0);
      const top = img.pixels[y0 * img.width + x0] * (1 - wx) + img.pixels[y0 * img.width + x1] * wx;
      const bot = img.pixels[y1 * img.width + x0] * (1 - wx) + img.pixels[y1 * img.width + x1] * wx;
      out[y * width + x] = top * (1 - wy) + bot * wy;
    }
  }
  return { width, height, pixels: out };
}
