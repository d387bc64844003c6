/**
 * Writers for the two file formats the main package consumes.
 *
 * Embedding file: one UTF-8 JSON header line `{"dim": d, "count": n}`
 * followed by n binary records of
 * `[class_id_len: u32 LE][class_id bytes][split: u8][d x f64 LE]`.
 *
 * Knowledge file: JSON with `embedding_dim`, ordered `classes` (id, base
 * flag, embedding), ordered `attributes` (id, embedding) and the binary
 * `assoc` matrix (rows follow classes, columns follow attributes).
 */

import { writeFileSync } from 'fs'

export type Split = 'base' | 'novel-val' | 'novel-test'

export const SPLIT_CODES: Record<Split, number> = {
  base: 0,
  'novel-val': 1,
  'novel-test': 2,
}

const SPLIT_ALIASES: Record<string, Split> = {
  base: 'base',
  '0': 'base',
  val: 'novel-val',
  'novel-val': 'novel-val',
  '1': 'novel-val',
  test: 'novel-test',
  'novel-test': 'novel-test',
  '2': 'novel-test',
}

export function parseSplit(raw: string): Split {
  const split = SPLIT_ALIASES[raw.trim().toLowerCase()]
  if (!split) {
    throw new Error(`unknown split ${JSON.stringify(raw)}; expected base, val or test`)
  }
  return split
}

export interface EmbeddingRecord {
  classId: string
  split: Split
  features: Float64Array
}

export function encodeEmbeddings(records: EmbeddingRecord[]): Buffer {
  if (records.length === 0) {
    throw new Error('refusing to write an embedding file with no records')
  }
  const dim = records[0].features.length
  const chunks: Buffer[] = [
    Buffer.from(JSON.stringify({ dim, count: records.length }) + '\n', 'utf-8'),
  ]
  for (const record of records) {
    if (record.features.length !== dim) {
      throw new Error(
        `record for ${record.classId} has ${record.features.length} features, expected ${dim}`,
      )
    }
    const id = Buffer.from(record.classId, 'utf-8')
    const head = Buffer.alloc(4 + id.length + 1)
    head.writeUInt32LE(id.length, 0)
    id.copy(head, 4)
    head.writeUInt8(SPLIT_CODES[record.split], 4 + id.length)
    const body = Buffer.alloc(8 * dim)
    for (let i = 0; i < dim; i++) {
      body.writeDoubleLE(record.features[i], 8 * i)
    }
    chunks.push(head, body)
  }
  return Buffer.concat(chunks)
}

export function writeEmbeddings(path: string, records: EmbeddingRecord[]): void {
  writeFileSync(path, encodeEmbeddings(records))
}

export interface KnowledgeClass {
  id: string
  base: boolean
  embedding: number[]
}

export interface KnowledgeAttribute {
  id: string
  embedding: number[]
}

export interface KnowledgeJson {
  embedding_dim: number
  classes: KnowledgeClass[]
  attributes: KnowledgeAttribute[]
  assoc: number[][]
}

export function writeKnowledge(path: string, knowledge: KnowledgeJson): void {
  const dims = new Set<number>([
    ...knowledge.classes.map(c => c.embedding.length),
    ...knowledge.attributes.map(a => a.embedding.length),
  ])
  if (dims.size > 1 || !dims.has(knowledge.embedding_dim)) {
    throw new Error('knowledge embeddings disagree on dimension')
  }
  for (const row of knowledge.assoc) {
    if (row.length !== knowledge.attributes.length) {
      throw new Error('assoc row length does not match attribute count')
    }
    if (row.some(x => x !== 0 && x !== 1)) {
      throw new Error('assoc entries must be 0 or 1')
    }
  }
  if (knowledge.assoc.length !== knowledge.classes.length) {
    throw new Error('assoc row count does not match class count')
  }
  writeFileSync(path, JSON.stringify(knowledge, null, 1) + '\n')
}
