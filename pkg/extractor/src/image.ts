import * as fs from 'fs'
import * as path from 'path'
import * as jpeg from 'jpeg-js'
import { PNG } from 'pngjs'

/** Decoded image: interleaved RGB floats in [0, 1], row-major. */
export interface RgbImage {
  width: number
  height: number
  /** length = width * height * 3 */
  data: Float32Array
}

function fromRgba(width: number, height: number, rgba: Uint8Array): RgbImage {
  let data = new Float32Array(width * height * 3)
  for (let i = 0; i < width * height; i++) {
    data[i * 3] = rgba[i * 4] / 255
    data[i * 3 + 1] = rgba[i * 4 + 1] / 255
    data[i * 3 + 2] = rgba[i * 4 + 2] / 255
  }
  return { width, height, data }
}

/** Binary PPM (P6, maxval 255): header "P6 <w> <h> 255" then RGB bytes. */
function decodePpm(raw: Buffer): RgbImage {
  let header = raw.toString('ascii', 0, Math.min(raw.length, 64))
  let match = /^P6\s+(\d+)\s+(\d+)\s+(\d+)\s/.exec(header)
  if (!match) throw new Error('not a binary PPM (P6) file')
  let [, w, h, maxval] = match
  let width = parseInt(w, 10)
  let height = parseInt(h, 10)
  if (parseInt(maxval, 10) !== 255) throw new Error('only maxval 255 PPM supported')
  let offset = match[0].length
  let expected = width * height * 3
  if (raw.length < offset + expected) throw new Error('truncated PPM payload')
  let data = new Float32Array(expected)
  for (let i = 0; i < expected; i++) {
    data[i] = raw[offset + i] / 255
  }
  return { width, height, data }
}

/** Decode PNG, JPEG, or binary PPM based on the file's magic bytes. */
export function loadImage(filePath: string): RgbImage {
  let raw = fs.readFileSync(filePath)
  if (raw.length >= 8 && raw[0] === 0x89 && raw[1] === 0x50) {
    let png = PNG.sync.read(raw)
    return fromRgba(png.width, png.height, png.data)
  }
  if (raw.length >= 2 && raw[0] === 0xff && raw[1] === 0xd8) {
    let decoded = jpeg.decode(raw, { useTArray: true })
    return fromRgba(decoded.width, decoded.height, decoded.data)
  }
  if (raw.length >= 2 && raw[0] === 0x50 && raw[1] === 0x36) {
    return decodePpm(raw)
  }
  throw new Error(`${path.basename(filePath)}: unsupported image format`)
}

/** Encode to PNG (used by tests and sample-data generation). */
export function savePng(image: RgbImage, filePath: string): void {
  let png = new PNG({ width: image.width, height: image.height })
  for (let i = 0; i < image.width * image.height; i++) {
    png.data[i * 4] = Math.round(image.data[i * 3] * 255)
    png.data[i * 4 + 1] = Math.round(image.data[i * 3 + 1] * 255)
    png.data[i * 4 + 2] = Math.round(image.data[i * 3 + 2] * 255)
    png.data[i * 4 + 3] = 255
  }
  fs.writeFileSync(filePath, PNG.sync.write(png))
}
