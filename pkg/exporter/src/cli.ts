#!/usr/bin/env node
/**
 * feature-exporter CLI.
 *
 *   feature-exporter export --images DIR --labels CSV --encoder NAME --out DIR
 *                           [--strict] [--split train] [--name NAME]
 *                           [--task-id 0] [--append] [--batch-size 64]
 *
 * Exit codes: 0 success, 1 usage/config error, 2 runtime failure.
 */

import yargs from 'yargs';
import { hideBin } from 'yargs/helpers';

import { knownEncoders } from './encoder';
import { exportFeatures } from './export';

export async function main(argv: string[]): Promise<number> {
  let exitCode = 0;
  await yargs(argv)
    .scriptName('feature-exporter')
    .command(
      'export',
      'encode a labeled image folder into CXFE/CXLB feature files',
      (cmd) =>
        cmd
          .option('images', { type: 'string', demandOption: true, describe: 'image folder' })
          .option('labels', { type: 'string', demandOption: true, describe: 'label CSV' })
          .option('encoder', {
            type: 'string',
            default: 'patchproj-64-d128',
            describe: `frozen encoder id (${knownEncoders().join(', ')})`,
          })
          .option('out', { type: 'string', demandOption: true, describe: 'output directory' })
          .option('strict', { type: 'boolean', default: false, describe: 'abort on unreadable images' })
          .option('split', { type: 'string', default: 'train', describe: 'train | val | test' })
          .option('name', { type: 'string', default: 'exported-task', describe: 'task name' })
          .option('task-id', { type: 'number', default: 0 })
          .option('append', { type: 'boolean', default: false, describe: 'add split to existing manifest' })
          .option('batch-size', { type: 'number', default: 64 }),
      (args) => {
        try {
          const result = exportFeatures(
            {
              imagesDir: args.images,
              labelsCsv: args.labels,
              encoderId: args.encoder,
              outDir: args.out,
              split: args.split,
              taskName: args.name,
              taskId: args['task-id'],
              strict: args.strict,
              append: args.append,
              batchSize: args['batch-size'],
            },
            (msg) => console.error(msg),
          );
          console.log(
            `exported ${result.written} rows (d=${result.dim}, ${result.skipped} skipped) -> ${result.manifestPath}`,
          );
        } catch (err) {
          const message = (err as Error).message;
          const usage =
            /unknown encoder|invalid code|split|needs|expected|must not contain|already present/.test(
              message,
            );
          console.error(`error: ${message}`);
          exitCode = usage ? 1 : 2;
        }
      },
    )
    .demandCommand(1, 'specify a command (export)')
    .strict()
    .fail((msg, err) => {
      console.error(`error: ${msg ?? err?.message}`);
      exitCode = 1;
    })
    .exitProcess(false)
    .parseAsync();
  return exitCode;
}

if (require.main === module) {
  main(hideBin(process.argv)).then((code) => {
    process.exitCode = code;
  });
}
