/**
 * Run a pretrained backbone over a labeled image tree and write the
 * embedding binary: one record per image with the penultimate-layer
 * features, the folder name as the class id and the split taken from the
 * split CSV.
 */

import * as tf from '@tensorflow/tfjs'
import { EmbeddingRecord, writeEmbeddings } from './formats.js'
import { decodeImage, toInputTensor } from './images.js'
import { ExportManifest, listImages, readSplitCsv } from './manifest.js'
import { inputHeightWidth, loadBackbone, penultimateFeatures } from './model-io.js'

export interface EmbeddingExportResult {
  count: number
  dim: number
}

export async function exportEmbeddings(manifest: ExportManifest): Promise<EmbeddingExportResult> {
  if (!manifest.backboneDir) throw new Error('manifest needs backboneDir')
  if (!manifest.outEmbeddings) throw new Error('manifest needs outEmbeddings')
  const splits = readSplitCsv(manifest.splitCsv)
  const images = listImages(manifest.datasetRoot)
  for (const image of images) {
    if (!splits.has(image.classId)) {
      throw new Error(`class ${image.classId} missing from split file ${manifest.splitCsv}`)
    }
  }
  const backbone = await loadBackbone(manifest.backboneDir)
  const extractor = penultimateFeatures(backbone)
  const [height, width] = inputHeightWidth(extractor)

  const records: EmbeddingRecord[] = []
  for (const image of images) {
    const decoded = decodeImage(image.path)
    const features = tf.tidy(() => {
      const input = toInputTensor(decoded, height, width)
      const out = extractor.predict(input) as tf.Tensor
      return out.reshape([-1])
    })
    const values = (await features.data()) as Float32Array
    features.dispose()
    records.push({
      classId: image.classId,
      split: splits.get(image.classId)!,
      features: Float64Array.from(values),
    })
  }
  writeEmbeddings(manifest.outEmbeddings, records)
  return { count: records.length, dim: records[0].features.length }
}
