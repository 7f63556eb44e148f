/**
 * Export job: encode every labeled image with a frozen encoder and write one
 * split's CXFE/CXLB pair plus the task manifest the training engine reads.
 */

import * as fs from 'fs';
import * as path from 'path';

import { getEncoder } from './encoder';
import { encodeFeatures, encodeLabels, writeManifestSplit } from './format';
import { decodeImage } from './image';
import { parseLabelCsv } from './labels';

export interface ExportJob {
  imagesDir: string;
  labelsCsv: string;
  encoderId: string;
  outDir: string;
  split: string; // train | val | test
  taskName: string;
  taskId: number;
  strict: boolean; // abort on unreadable images instead of skipping
  append: boolean; // add this split to an existing manifest
  batchSize: number; // progress-log granularity
}

export interface ExportResult {
  written: number;
  skipped: number;
  dim: number;
  featuresPath: string;
  labelsPath: string;
  manifestPath: string;
}

const SPLITS = new Set(['train', 'val', 'test']);

export function exportFeatures(job: ExportJob, log: (msg: string) => void = () => {}): ExportResult {
  if (!SPLITS.has(job.split)) {
    throw new Error(`split must be train, val or test, got '${job.split}'`);
  }
  const table = parseLabelCsv(fs.readFileSync(job.labelsCsv, 'utf-8'));
  const encoder = getEncoder(job.encoderId);
  const featureRows: Float32Array[] = [];
  const labelRows: Int8Array[] = [];
  let skipped = 0;
  table.rows.forEach((row, i) => {
    const imagePath = path.isAbsolute(row.image)
      ? row.image
      : path.join(job.imagesDir, row.image);
    let feature: Float64Array;
    try {
      feature = encoder.encode(decodeImage(imagePath));
    } catch (err) {
      if (job.strict) {
        throw new Error(`row ${i} (${row.image}): ${(err as Error).message}`);
      }
      skipped += 1;
      log(`skipping row ${i} (${row.image}): ${(err as Error).message}`);
      return;
    }
    featureRows.push(Float32Array.from(feature));
    labelRows.push(row.codes);
    if ((i + 1) % job.batchSize === 0) {
      log(`encoded ${i + 1}/${table.rows.length} images`);
    }
  });
  if (featureRows.length === 0) {
    throw new Error('no images could be encoded; nothing to write');
  }
  if (featureRows.length !== labelRows.length) {
    throw new Error(
      `feature/label row mismatch: ${featureRows.length} vs ${labelRows.length}`,
    );
  }
  fs.mkdirSync(job.outDir, { recursive: true });
  const featuresPath = path.join(job.outDir, `${job.split}.features.cxfe`);
  const labelsPath = path.join(job.outDir, `${job.split}.labels.cxlb`);
  fs.writeFileSync(featuresPath, encodeFeatures(featureRows, encoder.dim));
  fs.writeFileSync(labelsPath, encodeLabels(labelRows, table.classes.length));
  const manifestPath = path.join(job.outDir, 'manifest.txt');
  writeManifestSplit(
    manifestPath,
    {
      name: job.taskName,
      taskId: job.taskId,
      classes: table.classes,
      encoder: encoder.id,
      encoderDim: encoder.dim,
    },
    job.split,
    featuresPath,
    labelsPath,
    job.append,
  );
  log(`wrote ${featureRows.length} rows (${skipped} skipped) to ${job.outDir}`);
  return {
    written: featureRows.length,
    skipped,
    dim: encoder.dim,
    featuresPath,
    labelsPath,
    manifestPath,
  };
}
