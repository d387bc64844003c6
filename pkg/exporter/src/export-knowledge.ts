/**
 * Build the knowledge JSON from a class-attribute annotation CSV and a
 * word-vector table: deduplicated binary associations plus class and
 * attribute embeddings averaged over identifier tokens.
 */

import { KnowledgeJson, writeKnowledge } from './formats.js'
import { ExportManifest, readAttributeCsv, readSplitCsv } from './manifest.js'
import { WordVectors } from './wordvec.js'

export interface KnowledgeExportResult {
  classes: string[]
  attributes: string[]
  dim: number
  /** identifiers containing tokens absent from the word-vector table */
  warnings: string[]
}

export async function exportKnowledge(manifest: ExportManifest): Promise<KnowledgeExportResult> {
  if (!manifest.attributeCsv) throw new Error('manifest needs attributeCsv')
  if (!manifest.wordVectors) throw new Error('manifest needs wordVectors')
  if (!manifest.outKnowledge) throw new Error('manifest needs outKnowledge')
  const splits = readSplitCsv(manifest.splitCsv)
  const pairs = readAttributeCsv(manifest.attributeCsv)
  for (const pair of pairs) {
    if (!splits.has(pair.classId)) {
      throw new Error(
        `attribute file references class ${pair.classId} missing from the split file`,
      )
    }
  }
  // classes keep the split-file order; attributes are sorted for a
  // deterministic column layout
  const classes = [...splits.keys()]
  const attributes = [...new Set(pairs.map(p => p.attributeId))].sort()
  const attrIndex = new Map(attributes.map((a, i) => [a, i]))
  const assoc = classes.map(() => new Array<number>(attributes.length).fill(0))
  const classIndex = new Map(classes.map((c, i) => [c, i]))
  for (const pair of pairs) {
    assoc[classIndex.get(pair.classId)!][attrIndex.get(pair.attributeId)!] = 1
  }

  const vectors = WordVectors.fromFile(manifest.wordVectors)
  const warnings: string[] = []
  const embed = (identifier: string): number[] => {
    const { vector, unknownTokens } = vectors.phraseEmbedding(identifier)
    if (unknownTokens.length > 0) {
      warnings.push(
        `${identifier}: no vector for ${unknownTokens.join(', ')} (zero contribution)`,
      )
    }
    return vector
  }

  const knowledge: KnowledgeJson = {
    embedding_dim: vectors.dim,
    classes: classes.map(id => ({
      id,
      base: splits.get(id) === 'base',
      embedding: embed(id),
    })),
    attributes: attributes.map(id => ({ id, embedding: embed(id) })),
    assoc,
  }
  writeKnowledge(manifest.outKnowledge, knowledge)
  return { classes, attributes, dim: vectors.dim, warnings }
}
