/**
 * Pure-JS image decoding (PNG via pngjs, JPEG via jpeg-js) into float
 * tensors ready for backbone inference.
 */

import { readFileSync } from 'fs'
import * as tf from '@tensorflow/tfjs'
import jpeg from 'jpeg-js'
import { PNG } from 'pngjs'

export interface DecodedImage {
  width: number
  height: number
  /** RGBA bytes, row major */
  data: Uint8Array
}

export function decodeImage(path: string): DecodedImage {
  const raw = readFileSync(path)
  const lower = path.toLowerCase()
  try {
    if (lower.endsWith('.png')) {
      const png = PNG.sync.read(raw)
      return { width: png.width, height: png.height, data: new Uint8Array(png.data) }
    }
    if (lower.endsWith('.jpg') || lower.endsWith('.jpeg')) {
      const img = jpeg.decode(raw, { useTArray: true })
      return { width: img.width, height: img.height, data: new Uint8Array(img.data) }
    }
  } catch (err) {
    throw new Error(`cannot decode image ${path}: ${(err as Error).message}`)
  }
  throw new Error(`unsupported image format: ${path} (expected .png, .jpg or .jpeg)`)
}

/**
 * Image as a [1, height, width, 3] float tensor in [0, 1], resized with
 * bilinear interpolation when the backbone expects a different size.
 */
export function toInputTensor(image: DecodedImage, height: number, width: number): tf.Tensor4D {
  return tf.tidy(() => {
    const rgb = new Float32Array(image.width * image.height * 3)
    for (let px = 0; px < image.width * image.height; px++) {
      rgb[3 * px] = image.data[4 * px] / 255
      rgb[3 * px + 1] = image.data[4 * px + 1] / 255
      rgb[3 * px + 2] = image.data[4 * px + 2] / 255
    }
    let tensor = tf.tensor4d(rgb, [1, image.height, image.width, 3])
    if (image.height !== height || image.width !== width) {
      tensor = tf.image.resizeBilinear(tensor, [height, width])
    }
    return tensor
  })
}
