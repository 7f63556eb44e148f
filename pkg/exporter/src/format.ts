/**
 * CXFE / CXLB binary writers and the plain-text task manifest.
 *
 * Layouts (little-endian):
 *   CXFE: magic "CXFE", version u16, d u32, N u64, N*d float32 row-major.
 *   CXLB: magic "CXLB", version u16, C u32, N u64, N*C int8 label codes.
 * Label codes: negative=0, positive=1, uncertain=-1, missing=-2.
 */

import * as fs from 'fs';
import * as path from 'path';

export const FEATURE_MAGIC = 'CXFE';
export const LABEL_MAGIC = 'CXLB';
export const FORMAT_VERSION = 1;

export const CODE_NEGATIVE = 0;
export const CODE_POSITIVE = 1;
export const CODE_UNCERTAIN = -1;
export const CODE_MISSING = -2;

const VALID_CODES = new Set([CODE_NEGATIVE, CODE_POSITIVE, CODE_UNCERTAIN, CODE_MISSING]);

function header(magic: string, width: number, rows: number): Buffer {
  const buf = Buffer.alloc(4 + 2 + 4 + 8);
  buf.write(magic, 0, 'ascii');
  buf.writeUInt16LE(FORMAT_VERSION, 4);
  buf.writeUInt32LE(width, 6);
  buf.writeBigUInt64LE(BigInt(rows), 10);
  return buf;
}

export function encodeFeatures(rows: Float32Array[], dim: number): Buffer {
  const payload = Buffer.alloc(rows.length * dim * 4);
  rows.forEach((row, i) => {
    if (row.length !== dim) {
      throw new Error(`feature row ${i} has ${row.length} values, expected ${dim}`);
    }
    for (let j = 0; j < dim; j++) {
      if (!Number.isFinite(row[j])) {
        throw new Error(`non-finite feature at row ${i}, col ${j}`);
      }
      payload.writeFloatLE(row[j], (i * dim + j) * 4);
    }
  });
  return Buffer.concat([header(FEATURE_MAGIC, dim, rows.length), payload]);
}

export function encodeLabels(rows: Int8Array[], classes: number): Buffer {
  const payload = Buffer.alloc(rows.length * classes);
  rows.forEach((row, i) => {
    if (row.length !== classes) {
      throw new Error(`label row ${i} has ${row.length} codes, expected ${classes}`);
    }
    for (let j = 0; j < classes; j++) {
      if (!VALID_CODES.has(row[j])) {
        throw new Error(`unknown label code ${row[j]} at row ${i}, col ${j}`);
      }
      payload.writeInt8(row[j], i * classes + j);
    }
  });
  return Buffer.concat([header(LABEL_MAGIC, classes, rows.length), payload]);
}

function readHeader(buf: Buffer, magic: string): { width: number; rows: number; offset: number } {
  if (buf.subarray(0, 4).toString('ascii') !== magic) {
    throw new Error(`bad magic ${buf.subarray(0, 4).toString('ascii')}, expected ${magic}`);
  }
  const version = buf.readUInt16LE(4);
  if (version !== FORMAT_VERSION) {
    throw new Error(`unsupported format version ${version}`);
  }
  return { width: buf.readUInt32LE(6), rows: Number(buf.readBigUInt64LE(10)), offset: 18 };
}

/** Read-side helpers keep the exporter's tests self-contained. */
export function decodeFeatures(buf: Buffer): { rows: number; dim: number; data: Float32Array } {
  const { width, rows, offset } = readHeader(buf, FEATURE_MAGIC);
  const expected = rows * width * 4;
  if (buf.length - offset < expected) throw new Error('truncated feature payload');
  if (buf.length - offset > expected) throw new Error('trailing bytes in feature file');
  const data = new Float32Array(rows * width);
  for (let i = 0; i < data.length; i++) data[i] = buf.readFloatLE(offset + i * 4);
  return { rows, dim: width, data };
}

export function decodeLabels(buf: Buffer): { rows: number; classes: number; data: Int8Array } {
  const { width, rows, offset } = readHeader(buf, LABEL_MAGIC);
  const expected = rows * width;
  if (buf.length - offset < expected) throw new Error('truncated label payload');
  if (buf.length - offset > expected) throw new Error('trailing bytes in label file');
  const data = new Int8Array(rows * width);
  for (let i = 0; i < data.length; i++) {
    data[i] = buf.readInt8(offset + i);
    if (!VALID_CODES.has(data[i])) throw new Error(`unknown label code ${data[i]}`);
  }
  return { rows, classes: width, data };
}

// --- manifest ---------------------------------------------------------------

export interface ManifestMeta {
  name: string;
  taskId: number;
  classes: string[];
  encoder: string;
  encoderDim: number;
}

export function parseManifest(text: string): Map<string, string> {
  const entries = new Map<string, string>();
  text.split('\n').forEach((line, i) => {
    const stripped = line.split('#', 1)[0].trim();
    if (!stripped) return;
    const eq = stripped.indexOf('=');
    if (eq < 0) throw new Error(`manifest line ${i + 1}: expected 'key = value'`);
    entries.set(stripped.slice(0, eq).trim(), stripped.slice(eq + 1).trim());
  });
  return entries;
}

function renderManifest(entries: Map<string, string>): string {
  const lines = ['# taskgate dataset manifest'];
  for (const [key, value] of entries) lines.push(`${key} = ${value}`);
  return lines.join('\n') + '\n';
}

/**
 * Create the manifest or append one split's file entries to an existing one.
 * Appending validates that task metadata matches and the split is new.
 */
export function writeManifestSplit(
  manifestPath: string,
  meta: ManifestMeta,
  split: string,
  featuresFile: string,
  labelsFile: string,
  append: boolean,
): void {
  for (const name of meta.classes) {
    if (name.includes(',')) throw new Error(`class name '${name}' must not contain a comma`);
  }
  let entries: Map<string, string>;
  if (append && fs.existsSync(manifestPath)) {
    entries = parseManifest(fs.readFileSync(manifestPath, 'utf-8'));
    if (entries.get('name') !== meta.name) {
      throw new Error(`manifest task name '${entries.get('name')}' != '${meta.name}'`);
    }
    if (entries.get('classes') !== meta.classes.join(', ')) {
      throw new Error('manifest class list differs from the label table');
    }
    if (entries.has(`${split}.features`)) {
      throw new Error(`split '${split}' already present in ${manifestPath}`);
    }
  } else {
    entries = new Map<string, string>([
      ['name', meta.name],
      ['task_id', String(meta.taskId)],
      ['classes', meta.classes.join(', ')],
      ['encoder', meta.encoder],
      ['encoder_d', String(meta.encoderDim)],
    ]);
  }
  entries.set(`${split}.features`, path.basename(featuresFile));
  entries.set(`${split}.labels`, path.basename(labelsFile));
  fs.writeFileSync(manifestPath, renderManifest(entries), 'utf-8');
}
