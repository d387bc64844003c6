/**
 * Export inputs: the labeled image tree (`root/class_id/image.png`), the
 * class split CSV and the class-attribute annotation CSV.
 */

import { readFileSync, readdirSync, statSync } from 'fs'
import { join } from 'path'
import { Split, parseSplit } from './formats.js'

export interface ExportManifest {
  /** image folder tree: one subdirectory per class */
  datasetRoot: string
  /** CSV rows class_id,split with split in {base, val, test} */
  splitCsv: string
  /** CSV rows class_id,attribute_id */
  attributeCsv?: string
  /** word-vector text file (token v0 v1 ...) */
  wordVectors?: string
  /** directory holding the tfjs backbone (model.json + weights.bin) */
  backboneDir?: string
  outEmbeddings?: string
  outKnowledge?: string
}

function csvRows(path: string): string[][] {
  return readFileSync(path, 'utf-8')
    .split('\n')
    .map(line => line.trim())
    .filter(line => line.length > 0)
    .map(line => line.split(',').map(cell => cell.trim()))
}

export function readSplitCsv(path: string): Map<string, Split> {
  const splits = new Map<string, Split>()
  for (const row of csvRows(path)) {
    if (row.length !== 2) {
      throw new Error(`split file ${path}: expected class_id,split rows`)
    }
    splits.set(row[0], parseSplit(row[1]))
  }
  if (splits.size === 0) {
    throw new Error(`split file ${path} is empty`)
  }
  return splits
}

export interface AttributePair {
  classId: string
  attributeId: string
}

export function readAttributeCsv(path: string): AttributePair[] {
  const pairs: AttributePair[] = []
  for (const row of csvRows(path)) {
    if (row.length !== 2) {
      throw new Error(`attribute file ${path}: expected class_id,attribute_id rows`)
    }
    pairs.push({ classId: row[0], attributeId: row[1] })
  }
  return pairs
}

export interface ImageEntry {
  classId: string
  path: string
}

const IMAGE_EXTENSIONS = ['.png', '.jpg', '.jpeg']

/** Every image under `root/class_id/`, ordered by (class, filename). */
export function listImages(root: string): ImageEntry[] {
  const entries: ImageEntry[] = []
  const classDirs = readdirSync(root)
    .filter(name => statSync(join(root, name)).isDirectory())
    .sort()
  for (const classId of classDirs) {
    const files = readdirSync(join(root, classId))
      .filter(f => IMAGE_EXTENSIONS.some(ext => f.toLowerCase().endsWith(ext)))
      .sort()
    for (const file of files) {
      entries.push({ classId, path: join(root, classId, file) })
    }
  }
  if (entries.length === 0) {
    throw new Error(`no images found under ${root}`)
  }
  return entries
}
