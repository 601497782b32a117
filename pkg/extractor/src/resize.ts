import { RgbImage } from './image'

export type ResolutionTag = 'base' | 'up25' | 'down25'

export const RESOLUTION_SCALES: Record<ResolutionTag, number> = {
  base: 1.0,
  up25: 1.25,
  down25: 0.75,
}

/**
 * Target size for one resolution tag: the largest side becomes
 * round(scale * S) and the other side follows by the same factor, so the
 * aspect ratio is preserved within one pixel of rounding.
 */
export function scaledSize(
  width: number,
  height: number,
  tag: ResolutionTag,
): { width: number; height: number } {
  let scale = RESOLUTION_SCALES[tag]
  let largest = Math.max(width, height)
  let targetLargest = Math.max(1, Math.round(largest * scale))
  let factor = targetLargest / largest
  if (width >= height) {
    return { width: targetLargest, height: Math.max(1, Math.round(height * factor)) }
  }
  return { width: Math.max(1, Math.round(width * factor)), height: targetLargest }
}

/** Bilinear resample to an exact target size. */
export function resizeBilinear(image: RgbImage, width: number, height: number): RgbImage {
  if (width === image.width && height === image.height) {
    return { width, height, data: image.data.slice() }
  }
  let out = new Float32Array(width * height * 3)
  let xRatio = image.width / width
  let yRatio = image.height / height
  for (let y = 0; y < height; y++) {
    // sample at pixel centers so edges are not over-weighted
    let sy = Math.min(Math.max((y + 0.5) * yRatio - 0.5, 0), image.height - 1)
    let y0 = Math.floor(sy)
    let y1 = Math.min(y0 + 1, image.height - 1)
    let fy = sy - y0
    for (let x = 0; x < width; x++) {
      let sx = Math.min(Math.max((x + 0.5) * xRatio - 0.5, 0), image.width - 1)
      let x0 = Math.floor(sx)
      let x1 = Math.min(x0 + 1, image.width - 1)
      let fx = sx - x0
      for (let c = 0; c < 3; c++) {
        let tl = image.data[(y0 * image.width + x0) * 3 + c]
        let tr = image.data[(y0 * image.width + x1) * 3 + c]
        let bl = image.data[(y1 * image.width + x0) * 3 + c]
        let br = image.data[(y1 * image.width + x1) * 3 + c]
        let top = tl + (tr - tl) * fx
        let bottom = bl + (br - bl) * fx
        out[(y * width + x) * 3 + c] = top + (bottom - top) * fy
      }
    }
  }
  return { width, height, data: out }
}

export function resizeForTag(image: RgbImage, tag: ResolutionTag): RgbImage {
  let { width, height } = scaledSize(image.width, image.height, tag)
  return resizeBilinear(image, width, height)
}
