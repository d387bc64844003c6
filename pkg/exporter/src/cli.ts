#!/usr/bin/env node
/**
 * CLI bridge from real image datasets to the main package's file formats.
 *
 *   protofuse-export export-embeddings --dataset-root imgs/ --split-csv splits.csv \
 *       --backbone saved_model/ --out embeddings.bin
 *   protofuse-export export-knowledge --split-csv splits.csv --attribute-csv attrs.csv \
 *       --word-vectors glove.txt --out knowledge.json
 */

import { pathToFileURL } from 'url'
import yargs from 'yargs'
import { hideBin } from 'yargs/helpers'
import { exportEmbeddings } from './export-embeddings.js'
import { exportKnowledge } from './export-knowledge.js'

export async function main(argv: string[]): Promise<number> {
  try {
    await yargs(argv)
      .scriptName('protofuse-export')
      .command(
        'export-embeddings',
        'run the backbone over an image tree and write the embedding binary',
        y =>
          y
            .option('dataset-root', { type: 'string', demandOption: true })
            .option('split-csv', { type: 'string', demandOption: true })
            .option('backbone', { type: 'string', demandOption: true })
            .option('out', { type: 'string', demandOption: true }),
        async args => {
          const result = await exportEmbeddings({
            datasetRoot: args['dataset-root'],
            splitCsv: args['split-csv'],
            backboneDir: args.backbone,
            outEmbeddings: args.out,
          })
          console.log(`wrote ${result.count} embeddings (dim ${result.dim}) to ${args.out}`)
        },
      )
      .command(
        'export-knowledge',
        'write the knowledge JSON from attribute annotations and word vectors',
        y =>
          y
            .option('split-csv', { type: 'string', demandOption: true })
            .option('attribute-csv', { type: 'string', demandOption: true })
            .option('word-vectors', { type: 'string', demandOption: true })
            .option('out', { type: 'string', demandOption: true }),
        async args => {
          const result = await exportKnowledge({
            datasetRoot: '',
            splitCsv: args['split-csv'],
            attributeCsv: args['attribute-csv'],
            wordVectors: args['word-vectors'],
            outKnowledge: args.out,
          })
          for (const warning of result.warnings) {
            console.warn(`warning: ${warning}`)
          }
          console.log(
            `wrote ${result.classes.length} classes x ${result.attributes.length} attributes to ${args.out}`,
          )
        },
      )
      .demandCommand(1)
      .strict()
      .fail((msg, err) => {
        throw err ?? new Error(msg)
      })
      .parseAsync()
    return 0
  } catch (err) {
    console.error(`error: ${(err as Error).message}`)
    return 1
  }
}

if (process.argv[1] !== undefined && import.meta.url === pathToFileURL(process.argv[1]).href) {
  main(hideBin(process.argv)).then(code => {
    process.exitCode = code
  })
}
