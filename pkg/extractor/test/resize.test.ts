import { describe, expect, it } from 'vitest'
import { RgbImage } from '../src/image'
import { resizeBilinear, resizeForTag, scaledSize } from '../src/resize'

function solidImage(width: number, height: number, value = 0.5): RgbImage {
  return { width, height, data: new Float32Array(width * height * 3).fill(value) }
}

describe('scaledSize', () => {
  it('scales the largest side by exactly round(scale * S)', () => {
    for (let [w, h] of [[640, 480], [480, 640], [333, 501], [100, 100], [7, 3]]) {
      let largest = Math.max(w, h)
      let up = scaledSize(w, h, 'up25')
      let down = scaledSize(w, h, 'down25')
      expect(Math.max(up.width, up.height)).toBe(Math.round(1.25 * largest))
      expect(Math.max(down.width, down.height)).toBe(Math.round(0.75 * largest))
      let base = scaledSize(w, h, 'base')
      expect([base.width, base.height]).toEqual([w, h])
    }
  })

  it('preserves the aspect ratio within one pixel of rounding', () => {
    for (let [w, h] of [[640, 480], [1023, 511], [300, 900], [50, 49]]) {
      for (let tag of ['up25', 'down25'] as const) {
        let scaled = scaledSize(w, h, tag)
        let factor = Math.max(scaled.width, scaled.height) / Math.max(w, h)
        expect(Math.abs(scaled.width - w * factor)).toBeLessThanOrEqual(0.5)
        expect(Math.abs(scaled.height - h * factor)).toBeLessThanOrEqual(0.5)
      }
    }
  })

  it('never collapses a side below one pixel', () => {
    let tiny = scaledSize(2, 1, 'down25')
    expect(tiny.width).toBeGreaterThanOrEqual(1)
    expect(tiny.height).toBeGreaterThanOrEqual(1)
  })
})

describe('resizeBilinear', () => {
  it('keeps constant images constant', () => {
    let resized = resizeBilinear(solidImage(8, 6, 0.25), 10, 7)
    for (let v of resized.data) expect(v).toBeCloseTo(0.25, 6)
  })

  it('returns a copy at identical size', () => {
    let image = solidImage(4, 4)
    let same = resizeBilinear(image, 4, 4)
    expect(same.data).not.toBe(image.data)
    expect(Array.from(same.data)).toEqual(Array.from(image.data))
  })

  it('interpolates a horizontal gradient monotonically', () => {
    let image: RgbImage = { width: 4, height: 1, data: new Float32Array(12) }
    for (let x = 0; x < 4; x++) {
      for (let c = 0; c < 3; c++) image.data[x * 3 + c] = x / 3
    }
    let wide = resizeBilinear(image, 8, 1)
    for (let x = 1; x < 8; x++) {
      expect(wide.data[x * 3]).toBeGreaterThanOrEqual(wide.data[(x - 1) * 3])
    }
  })

  it('resizeForTag produces the scaledSize dimensions', () => {
    let image = solidImage(64, 48)
    let up = resizeForTag(image, 'up25')
    expect([up.width, up.height]).toEqual([80, 60])
    let down = resizeForTag(image, 'down25')
    expect([down.width, down.height]).toEqual([48, 36])
  })
})
