import * as fs from 'fs';
import * as os from 'os';
import * as path from 'path';

import { PNG } from 'pngjs';
import { describe, expect, it } from 'vitest';

import { decodeFeatures, decodeLabels, parseManifest } from '../src/format';
import { decodeImage } from '../src/image';
import { parseLabelCsv } from '../src/labels';
import { exportFeatures } from '../src/export';

function writePgm(filePath: string, width: number, height: number, fill: number): void {
  const header = Buffer.from(`P5\n${width} ${height}\n255\n`, 'ascii');
  const payload = Buffer.alloc(width * height, fill);
  fs.writeFileSync(filePath, Buffer.concat([header, payload]));
}

function writePng(filePath: string, width: number, height: number, fill: number): void {
  const png = new PNG({ width, height });
  for (let i = 0; i < width * height; i++) {
    png.data[i * 4] = fill;
    png.data[i * 4 + 1] = fill;
    png.data[i * 4 + 2] = fill;
    png.data[i * 4 + 3] = 255;
  }
  fs.writeFileSync(filePath, PNG.sync.write(png));
}

function workspace(): { dir: string; images: string } {
  const dir = fs.mkdtempSync(path.join(os.tmpdir(), 'export-'));
  const images = path.join(dir, 'images');
  fs.mkdirSync(images);
  return { dir, images };
}

describe('label CSV parsing', () => {
  it('maps codes and blank-for-missing', () => {
    const table = parseLabelCsv('image,edema,nodule\na.pgm,1,0\nb.pgm,-1,\n');
    expect(table.classes).toEqual(['edema', 'nodule']);
    expect(Array.from(table.rows[0].codes)).toEqual([1, 0]);
    expect(Array.from(table.rows[1].codes)).toEqual([-1, -2]);
  });

  it('rejects invalid codes', () => {
    expect(() => parseLabelCsv('image,a\nx.pgm,2\n')).toThrow(/invalid code '2'/);
  });
});

describe('image decoding', () => {
  it('reads PGM and PNG into matching grayscale maps', () => {
    const { images } = workspace();
    const pgm = path.join(images, 'x.pgm');
    const png = path.join(images, 'x.png');
    writePgm(pgm, 6, 4, 128);
    writePng(png, 6, 4, 128);
    const a = decodeImage(pgm);
    const b = decodeImage(png);
    expect(a.width).toBe(6);
    expect(b.height).toBe(4);
    expect(a.pixels[0]).toBeCloseTo(b.pixels[0], 6);
  });

  it('rejects unknown formats', () => {
    const { images } = workspace();
    const bad = path.join(images, 'x.bin');
    fs.writeFileSync(bad, Buffer.from('not an image'));
    expect(() => decodeImage(bad)).toThrow(/unsupported image format/);
  });
});

describe('exportFeatures', () => {
  function setup(n: number): { dir: string; images: string; csv: string } {
    const { dir, images } = workspace();
    const lines = ['image,edema,nodule'];
    for (let i = 0; i < n; i++) {
      const name = `img_${i}.pgm`;
      writePgm(path.join(images, name), 16, 16, 20 + i * 17);
      const edema = i % 3 === 0 ? '1' : '0';
      const nodule = i % 4 === 0 ? '-1' : i % 4 === 1 ? '' : '0';
      lines.push(`${name},${edema},${nodule}`);
    }
    const csv = path.join(dir, 'labels.csv');
    fs.writeFileSync(csv, lines.join('\n') + '\n');
    return { dir, images, csv };
  }

  it('writes a readable split with header d matching the encoder', () => {
    const { dir, images, csv } = setup(10);
    const out = path.join(dir, 'out');
    const result = exportFeatures({
      imagesDir: images,
      labelsCsv: csv,
      encoderId: 'patchproj-32-d64',
      outDir: out,
      split: 'train',
      taskName: 'demo',
      taskId: 0,
      strict: true,
      append: false,
      batchSize: 4,
    });
    expect(result.written).toBe(10);
    expect(result.skipped).toBe(0);
    const feats = decodeFeatures(fs.readFileSync(result.featuresPath));
    expect(feats.rows).toBe(10);
    expect(feats.dim).toBe(64);
    const labels = decodeLabels(fs.readFileSync(result.labelsPath));
    expect(labels.rows).toBe(10);
    expect(labels.classes).toBe(2);
    expect(labels.data[1]).toBe(-1); // first row nodule: -1
    expect(labels.data[3]).toBe(-2); // second row nodule: blank -> missing
    const manifest = parseManifest(fs.readFileSync(result.manifestPath, 'utf-8'));
    expect(manifest.get('encoder')).toBe('patchproj-32-d64');
    expect(manifest.get('encoder_d')).toBe('64');
  });

  it('is byte-deterministic across runs', () => {
    const { dir, images, csv } = setup(6);
    const args = (out: string) => ({
      imagesDir: images,
      labelsCsv: csv,
      encoderId: 'patchproj-64-d128',
      outDir: out,
      split: 'train' as const,
      taskName: 'demo',
      taskId: 0,
      strict: true,
      append: false,
      batchSize: 64,
    });
    const r1 = exportFeatures(args(path.join(dir, 'o1')));
    const r2 = exportFeatures(args(path.join(dir, 'o2')));
    expect(fs.readFileSync(r1.featuresPath).equals(fs.readFileSync(r2.featuresPath))).toBe(true);
    expect(fs.readFileSync(r1.labelsPath).equals(fs.readFileSync(r2.labelsPath))).toBe(true);
  });

  it('skips unreadable images by default and aborts with strict', () => {
    const { dir, images, csv } = setup(5);
    fs.writeFileSync(path.join(images, 'img_2.pgm'), Buffer.from('garbage'));
    const base = {
      imagesDir: images,
      labelsCsv: csv,
      encoderId: 'patchproj-32-d64',
      split: 'train' as const,
      taskName: 'demo',
      taskId: 0,
      append: false,
      batchSize: 64,
    };
    const lenient = exportFeatures({ ...base, outDir: path.join(dir, 'lenient'), strict: false });
    expect(lenient.written).toBe(4);
    expect(lenient.skipped).toBe(1);
    expect(() =>
      exportFeatures({ ...base, outDir: path.join(dir, 'strict'), strict: true }),
    ).toThrow(/img_2\.pgm/);
  });

  it('appends a second split to the same manifest', () => {
    const { dir, images, csv } = setup(8);
    const out = path.join(dir, 'out');
    const base = {
      imagesDir: images,
      labelsCsv: csv,
      encoderId: 'patchproj-32-d64',
      outDir: out,
      taskName: 'demo',
      taskId: 0,
      strict: true,
      batchSize: 64,
    };
    exportFeatures({ ...base, split: 'train', append: false });
    const result = exportFeatures({ ...base, split: 'test', append: true });
    const manifest = parseManifest(fs.readFileSync(result.manifestPath, 'utf-8'));
    expect(manifest.get('train.features')).toBe('train.features.cxfe');
    expect(manifest.get('test.features')).toBe('test.features.cxfe');
  });
});
