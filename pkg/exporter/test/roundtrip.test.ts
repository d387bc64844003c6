/**
 * The exporter's whole point: its files must load cleanly through the main
 * package's loaders with every store and knowledge-base invariant intact.
 */

import { execFileSync } from 'child_process'
import { mkdtempSync } from 'fs'
import { tmpdir } from 'os'
import { join } from 'path'
import { beforeAll, describe, expect, it } from 'vitest'
import { exportEmbeddings } from '../src/export-embeddings.js'
import { exportKnowledge } from '../src/export-knowledge.js'
import { Fixture, buildFixture } from './fixture.js'

let fixture: Fixture

beforeAll(async () => {
  fixture = await buildFixture(mkdtempSync(join(tmpdir(), 'exp-rt-')))
  await exportEmbeddings(fixture)
  await exportKnowledge(fixture)
}, 30_000)

const VALIDATE = `
import sys
from protofuse import load_embeddings, load_knowledge, split_attributes

emb_path, kb_path = sys.argv[1], sys.argv[2]
kb = load_knowledge(kb_path)
store = load_embeddings(emb_path, kb=kb)  # enforces class and split purity
assert len(store) == 10, len(store)
assert store.dim == 12, store.dim
assert kb.base_classes == {"arctic_fox", "polar_bear"}
assert store.classes_in_split("base") == ("arctic_fox", "polar_bear")
assert store.classes_in_split("novel-test") == ("snow_owl",)
split = split_attributes(kb)
assert set(split.seen) == {"tail", "paw", "fur"}, split.seen
assert set(split.unseen) == {"beak"}, split.unseen
print("ROUNDTRIP-OK")
`

describe('round-trip through the main package', () => {
  it('exported files satisfy the loaders and their invariants', () => {
    const out = execFileSync(
      'python3',
      ['-c', VALIDATE, fixture.outEmbeddings, fixture.outKnowledge],
      { encoding: 'utf-8' },
    )
    expect(out).toContain('ROUNDTRIP-OK')
  })
})
