/**
 * Word-vector table in the usual text layout: one line per token,
 * `token v0 v1 ... v(d-1)`.  Identifiers are embedded as the average of
 * their token vectors; tokens outside the table contribute a zero vector
 * and a warning.
 */

import { readFileSync } from 'fs'

export interface PhraseEmbedding {
  vector: number[]
  unknownTokens: string[]
}

export class WordVectors {
  private table = new Map<string, number[]>()
  readonly dim: number

  private constructor(table: Map<string, number[]>, dim: number) {
    this.table = table
    this.dim = dim
  }

  static fromFile(path: string): WordVectors {
    const table = new Map<string, number[]>()
    let dim = -1
    const lines = readFileSync(path, 'utf-8').split('\n')
    for (let i = 0; i < lines.length; i++) {
      const line = lines[i].trim()
      if (!line) continue
      const parts = line.split(/\s+/)
      const token = parts[0].toLowerCase()
      const vector = parts.slice(1).map(Number)
      if (vector.some(Number.isNaN)) {
        throw new Error(`bad vector on line ${i + 1} of ${path}`)
      }
      if (dim === -1) dim = vector.length
      if (vector.length !== dim) {
        throw new Error(
          `line ${i + 1} of ${path} has ${vector.length} values, expected ${dim}`,
        )
      }
      table.set(token, vector)
    }
    if (dim < 1) {
      throw new Error(`no word vectors found in ${path}`)
    }
    return new WordVectors(table, dim)
  }

  lookup(token: string): number[] | undefined {
    return this.table.get(token.toLowerCase())
  }

  /** Tokens of an identifier: split on whitespace, underscores, hyphens. */
  static tokenize(identifier: string): string[] {
    return identifier
      .split(/[\s_\-]+/)
      .map(t => t.trim())
      .filter(t => t.length > 0)
  }

  phraseEmbedding(identifier: string): PhraseEmbedding {
    const tokens = WordVectors.tokenize(identifier)
    const vector = new Array<number>(this.dim).fill(0)
    const unknownTokens: string[] = []
    let known = 0
    for (const token of tokens) {
      const v = this.lookup(token)
      if (v === undefined) {
        unknownTokens.push(token)
        continue
      }
      known += 1
      for (let i = 0; i < this.dim; i++) vector[i] += v[i]
    }
    if (known > 0) {
      for (let i = 0; i < this.dim; i++) vector[i] /= known
    }
    return { vector, unknownTokens }
  }
}
