/**
 * Self-contained export fixture: ten deterministic PNG/JPEG images across
 * three classes, a seeded two-layer backbone saved to disk, a split CSV,
 * an attribute CSV and a small word-vector table.
 */

import { mkdirSync, writeFileSync } from 'fs'
import { join } from 'path'
import * as tf from '@tensorflow/tfjs'
import jpeg from 'jpeg-js'
import { PNG } from 'pngjs'
import { saveModel } from '../src/model-io.js'

/** Tiny deterministic PRNG (mulberry32). */
export function seededRandom(seed: number): () => number {
  let a = seed >>> 0
  return () => {
    a = (a + 0x6d2b79f5) >>> 0
    let t = a
    t = Math.imul(t ^ (t >>> 15), t | 1)
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61)
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296
  }
}

export const IMAGE_SIZE = 16

function patternPixels(rand: () => number, tint: [number, number, number]): Buffer {
  const data = Buffer.alloc(IMAGE_SIZE * IMAGE_SIZE * 4)
  for (let px = 0; px < IMAGE_SIZE * IMAGE_SIZE; px++) {
    data[4 * px] = Math.floor(255 * Math.min(1, tint[0] * rand()))
    data[4 * px + 1] = Math.floor(255 * Math.min(1, tint[1] * rand()))
    data[4 * px + 2] = Math.floor(255 * Math.min(1, tint[2] * rand()))
    data[4 * px + 3] = 255
  }
  return data
}

function writePng(path: string, pixels: Buffer): void {
  const png = new PNG({ width: IMAGE_SIZE, height: IMAGE_SIZE })
  pixels.copy(png.data)
  writeFileSync(path, PNG.sync.write(png))
}

function writeJpeg(path: string, pixels: Buffer): void {
  const encoded = jpeg.encode(
    { width: IMAGE_SIZE, height: IMAGE_SIZE, data: pixels },
    90,
  )
  writeFileSync(path, encoded.data)
}

export interface Fixture {
  root: string
  datasetRoot: string
  splitCsv: string
  attributeCsv: string
  wordVectors: string
  backboneDir: string
  outEmbeddings: string
  outKnowledge: string
  imageCount: number
  featureDim: number
}

/** Classes: two base (arctic_fox, polar_bear), one novel (snow_owl). */
export async function buildFixture(root: string): Promise<Fixture> {
  const datasetRoot = join(root, 'images')
  const tints: Record<string, [number, number, number]> = {
    arctic_fox: [1.0, 0.4, 0.4],
    polar_bear: [0.4, 1.0, 0.4],
    snow_owl: [0.4, 0.4, 1.0],
  }
  const counts: Record<string, number> = { arctic_fox: 4, polar_bear: 3, snow_owl: 3 }
  let seed = 1
  for (const [classId, n] of Object.entries(counts)) {
    mkdirSync(join(datasetRoot, classId), { recursive: true })
    for (let i = 0; i < n; i++) {
      const pixels = patternPixels(seededRandom(seed++), tints[classId])
      const file = join(datasetRoot, classId, `img${i}`)
      if (i % 2 === 0) writePng(`${file}.png`, pixels)
      else writeJpeg(`${file}.jpg`, pixels)
    }
  }

  const splitCsv = join(root, 'splits.csv')
  writeFileSync(
    splitCsv,
    'arctic_fox,base\npolar_bear,base\nsnow_owl,test\n',
  )

  const attributeCsv = join(root, 'attributes.csv')
  writeFileSync(
    attributeCsv,
    [
      'arctic_fox,tail',
      'arctic_fox,paw',
      'arctic_fox,tail', // duplicate on purpose
      'polar_bear,paw',
      'polar_bear,fur',
      'snow_owl,beak',
      'snow_owl,tail',
      '',
    ].join('\n'),
  )

  const wordVectors = join(root, 'vectors.txt')
  const rand = seededRandom(99)
  const tokens = ['arctic', 'fox', 'polar', 'bear', 'snow', 'owl', 'tail', 'paw', 'fur', 'beak']
  const dim = 6
  const lines = tokens.map(token => {
    const vec = Array.from({ length: dim }, () => (rand() * 2 - 1).toFixed(6))
    return `${token} ${vec.join(' ')}`
  })
  writeFileSync(wordVectors, lines.join('\n') + '\n')

  const backboneDir = join(root, 'backbone')
  const featureDim = 12
  const model = buildBackbone(featureDim)
  await saveModel(model, backboneDir)
  model.dispose()

  return {
    root,
    datasetRoot,
    splitCsv,
    attributeCsv,
    wordVectors,
    backboneDir,
    outEmbeddings: join(root, 'embeddings.bin'),
    outKnowledge: join(root, 'knowledge.json'),
    imageCount: 10,
    featureDim,
  }
}

/** Classifier whose penultimate layer is the feature extractor. */
export function buildBackbone(featureDim: number): tf.LayersModel {
  const model = tf.sequential({
    layers: [
      tf.layers.flatten({ inputShape: [IMAGE_SIZE, IMAGE_SIZE, 3] }),
      tf.layers.dense({ units: featureDim, activation: 'relu' }),
      tf.layers.dense({ units: 3, activation: 'softmax' }),
    ],
  })
  // deterministic weights: tfjs initializers are not seedable across runs
  const rand = seededRandom(7)
  model.setWeights(
    model.getWeights().map(w => {
      const values = Float32Array.from(
        { length: w.size },
        () => (rand() * 2 - 1) * 0.2,
      )
      return tf.tensor(values, w.shape as number[])
    }),
  )
  return model
}
