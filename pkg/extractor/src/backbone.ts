import { FeatureMap } from './fmap'
import { RgbImage } from './image'

/**
 * A backbone turns an RGB image into one spatial activation tensor.  The
 * extraction harness only depends on this interface; which network and
 * which layer produce the tensor is a configuration concern.
 */
export interface Backbone {
  name: string
  layer: string
  channels: number
  run(image: RgbImage): FeatureMap
}

// Deterministic PRNG so backbone weights are identical on every machine.
function mulberry32(seed: number): () => number {
  let a = seed >>> 0
  return () => {
    a = (a + 0x6d2b79f5) >>> 0
    let t = Math.imul(a ^ (a >>> 15), 1 | a)
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296
  }
}

interface ConvStage {
  weights: Float32Array // [outC][inC][3][3]
  bias: Float32Array
  inC: number
  outC: number
}

function makeStage(rand: () => number, inC: number, outC: number): ConvStage {
  let weights = new Float32Array(outC * inC * 9)
  let scale = Math.sqrt(2 / (inC * 9))
  for (let i = 0; i < weights.length; i++) {
    // sum of uniforms approximates a normal draw; exact shape is uncritical
    weights[i] = (rand() + rand() + rand() - 1.5) * scale
  }
  let bias = new Float32Array(outC)
  for (let i = 0; i < outC; i++) bias[i] = rand() * 0.01
  return { weights, bias, inC, outC }
}

/** 3x3 convolution, stride 2, same padding, ReLU. */
function convStride2(
  data: Float32Array, width: number, height: number, stage: ConvStage,
): { data: Float32Array; width: number; height: number } {
  let outW = Math.max(1, Math.ceil(width / 2))
  let outH = Math.max(1, Math.ceil(height / 2))
  let { inC, outC, weights, bias } = stage
  let out = new Float32Array(outW * outH * outC)
  for (let oy = 0; oy < outH; oy++) {
    for (let ox = 0; ox < outW; ox++) {
      let cy = oy * 2
      let cx = ox * 2
      for (let oc = 0; oc < outC; oc++) {
        let acc = bias[oc]
        for (let ky = -1; ky <= 1; ky++) {
          let y = cy + ky
          if (y < 0 || y >= height) continue
          for (let kx = -1; kx <= 1; kx++) {
            let x = cx + kx
            if (x < 0 || x >= width) continue
            let base = (y * width + x) * inC
            let wBase = ((oc * inC) * 9 + (ky + 1) * 3 + (kx + 1))
            for (let ic = 0; ic < inC; ic++) {
              acc += data[base + ic] * weights[wBase + ic * 9]
            }
          }
        }
        out[(oy * outW + ox) * outC + oc] = acc > 0 ? acc : 0
      }
    }
  }
  return { data: out, width: outW, height: outH }
}

/**
 * Small convolutional backbone with fixed seeded weights: three 3x3
 * stride-2 stages with ReLU, giving a 1/8-resolution activation tensor.
 * Random-projection features are deterministic, cheap, and exercise the
 * full pipeline; swap in a real network by implementing Backbone.
 * The "layer" name selects the tap point: stage2 (32 channels) or
 * stage3 (64 channels).
 */
export class SeededCnnBackbone implements Backbone {
  name = 'seeded-cnn'
  layer: string
  channels: number
  private stages: ConvStage[]
  private tap: number

  constructor(layer = 'stage3', seed = 1234) {
    let rand = mulberry32(seed)
    this.stages = [
      makeStage(rand, 3, 16),
      makeStage(rand, 16, 32),
      makeStage(rand, 32, 64),
    ]
    let taps: Record<string, number> = { stage1: 1, stage2: 2, stage3: 3 }
    if (!(layer in taps)) {
      throw new Error(`unknown layer ${layer} for seeded-cnn ` +
        `(expected stage1, stage2, or stage3)`)
    }
    this.layer = layer
    this.tap = taps[layer]
    this.channels = this.stages[this.tap - 1].outC
  }

  run(image: RgbImage): FeatureMap {
    let current = { data: image.data, width: image.width, height: image.height }
    for (let i = 0; i < this.tap; i++) {
      current = convStride2(current.data, current.width, current.height, this.stages[i])
    }
    return {
      width: current.width,
      height: current.height,
      channels: this.stages[this.tap - 1].outC,
      data: current.data,
    }
  }
}

export function createBackbone(name: string, layer: string): Backbone {
  if (name === 'seeded-cnn') {
    return new SeededCnnBackbone(layer || 'stage3')
  }
  throw new Error(`unknown backbone ${name} (available: seeded-cnn)`)
}
