/**
 * Disk persistence for tfjs layers models without the native node binding.
 *
 * Layout matches the standard tfjs artifact format: `model.json` carries
 * the topology plus a weights manifest pointing at `weights.bin`.
 */

import { existsSync, mkdirSync, readFileSync, writeFileSync } from 'fs'
import { join } from 'path'
import * as tf from '@tensorflow/tfjs'

export function diskSaveHandler(dir: string): tf.io.IOHandler {
  return {
    async save(artifacts: tf.io.ModelArtifacts): Promise<tf.io.SaveResult> {
      mkdirSync(dir, { recursive: true })
      const manifest = {
        modelTopology: artifacts.modelTopology,
        weightsManifest: [
          { paths: ['weights.bin'], weights: artifacts.weightSpecs ?? [] },
        ],
      }
      writeFileSync(join(dir, 'model.json'), JSON.stringify(manifest))
      const weights = artifacts.weightData as ArrayBuffer
      writeFileSync(join(dir, 'weights.bin'), Buffer.from(weights))
      return {
        modelArtifactsInfo: {
          dateSaved: new Date(),
          modelTopologyType: 'JSON',
        },
      }
    },
  }
}

export function diskLoadHandler(dir: string): tf.io.IOHandler {
  return {
    async load(): Promise<tf.io.ModelArtifacts> {
      const manifestPath = join(dir, 'model.json')
      if (!existsSync(manifestPath)) {
        throw new Error(`no model.json under ${dir}`)
      }
      const manifest = JSON.parse(readFileSync(manifestPath, 'utf-8'))
      const weightSpecs: tf.io.WeightsManifestEntry[] = []
      const buffers: Buffer[] = []
      for (const group of manifest.weightsManifest ?? []) {
        weightSpecs.push(...group.weights)
        for (const rel of group.paths) {
          buffers.push(readFileSync(join(dir, rel)))
        }
      }
      const blob = Buffer.concat(buffers)
      return {
        modelTopology: manifest.modelTopology,
        weightSpecs,
        weightData: blob.buffer.slice(blob.byteOffset, blob.byteOffset + blob.byteLength),
      }
    },
  }
}

export async function saveModel(model: tf.LayersModel, dir: string): Promise<void> {
  await model.save(diskSaveHandler(dir))
}

export async function loadBackbone(dir: string): Promise<tf.LayersModel> {
  try {
    return await tf.loadLayersModel(diskLoadHandler(dir))
  } catch (err) {
    throw new Error(`backbone load failure at ${dir}: ${(err as Error).message}`)
  }
}

/**
 * Feature extractor view of a classifier: same inputs, output taken from
 * the next-to-last layer.
 */
export function penultimateFeatures(model: tf.LayersModel): tf.LayersModel {
  if (model.layers.length < 2) {
    throw new Error('backbone needs at least two layers to expose penultimate features')
  }
  const cut = model.layers[model.layers.length - 2]
  return tf.model({ inputs: model.inputs, outputs: cut.output as tf.SymbolicTensor })
}

export function inputHeightWidth(model: tf.LayersModel): [number, number] {
  const shape = model.inputs[0].shape
  const height = shape[1]
  const width = shape[2]
  if (typeof height !== 'number' || typeof width !== 'number') {
    throw new Error(`backbone input shape ${JSON.stringify(shape)} has no fixed size`)
  }
  return [height, width]
}
