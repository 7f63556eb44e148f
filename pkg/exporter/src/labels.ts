/**
 * Label table parsing: CSV with an image-path column followed by one column
 * per finding. Cell codes: 0 negative, 1 positive, -1 uncertain, blank missing.
 */

import Papa from 'papaparse';

import { CODE_MISSING, CODE_NEGATIVE, CODE_POSITIVE, CODE_UNCERTAIN } from './format';

export interface LabelRow {
  image: string;
  codes: Int8Array;
}

export interface LabelTable {
  classes: string[];
  rows: LabelRow[];
}

function parseCode(cell: string, row: number, column: string): number {
  const value = cell.trim();
  if (value === '') return CODE_MISSING;
  if (value === '0') return CODE_NEGATIVE;
  if (value === '1') return CODE_POSITIVE;
  if (value === '-1') return CODE_UNCERTAIN;
  throw new Error(
    `label row ${row}, column '${column}': invalid code '${value}' (use 0, 1, -1 or blank)`,
  );
}

export function parseLabelCsv(text: string): LabelTable {
  const parsed = Papa.parse<string[]>(text.trim(), { skipEmptyLines: true });
  if (parsed.errors.length) {
    const e = parsed.errors[0];
    throw new Error(`label CSV parse error at row ${e.row}: ${e.message}`);
  }
  const data = parsed.data;
  if (data.length < 2) throw new Error('label CSV needs a header row and at least one sample');
  const header = data[0].map((h) => h.trim());
  if (header.length < 2) throw new Error('label CSV needs an image column plus >= 1 finding');
  const classes = header.slice(1);
  const rows: LabelRow[] = [];
  for (let i = 1; i < data.length; i++) {
    const cells = data[i];
    if (cells.length !== header.length) {
      throw new Error(`label row ${i}: ${cells.length} cells, expected ${header.length}`);
    }
    const image = cells[0].trim();
    if (!image) throw new Error(`label row ${i}: empty image path`);
    const codes = new Int8Array(classes.length);
    for (let c = 0; c < classes.length; c++) {
      codes[c] = parseCode(cells[c + 1], i, classes[c]);
    }
    rows.push({ image, codes });
  }
  return { classes, rows };
}
