import * as fs from 'fs'
import * as path from 'path'

export const FMAP_MAGIC = 'FMAP'
export const FMAP_VERSION = 1

/** One activation tensor, float32 values in (y, x, d) order. */
export interface FeatureMap {
  width: number
  height: number
  channels: number
  /** length = width * height * channels, value (y,x,d) at (y*W + x)*D + d */
  data: Float32Array
}

export function featureMapIndex(map: FeatureMap, y: number, x: number, d: number): number {
  return (y * map.width + x) * map.channels + d
}

function validate(map: FeatureMap): void {
  let { width, height, channels, data } = map
  if (width < 1 || height < 1 || channels < 1) {
    throw new Error(`feature map dims must be >= 1, got ${width}x${height}x${channels}`)
  }
  if (data.length !== width * height * channels) {
    throw new Error(
      `data length ${data.length} does not match ${width}x${height}x${channels}`,
    )
  }
  for (let i = 0; i < data.length; i++) {
    if (!Number.isFinite(data[i])) {
      throw new Error(`non-finite value at flat index ${i}`)
    }
  }
}

/**
 * Binary layout: "FMAP" | version u32 LE | W u32 | H u32 | D u32 |
 * W*H*D float32 LE payload.  Written via a temp file and renamed so a
 * failed write never leaves a partial file.
 */
export function writeFeatureMap(map: FeatureMap, filePath: string): void {
  validate(map)
  let header = Buffer.alloc(20)
  header.write(FMAP_MAGIC, 0, 'ascii')
  header.writeUInt32LE(FMAP_VERSION, 4)
  header.writeUInt32LE(map.width, 8)
  header.writeUInt32LE(map.height, 12)
  header.writeUInt32LE(map.channels, 16)
  let payload = Buffer.alloc(map.data.length * 4)
  for (let i = 0; i < map.data.length; i++) {
    payload.writeFloatLE(map.data[i], i * 4)
  }
  let tmp = filePath + `.tmp${process.pid}`
  fs.writeFileSync(tmp, Buffer.concat([header, payload]))
  fs.renameSync(tmp, filePath)
}

/** Read and validate a file written by writeFeatureMap. */
export function readFeatureMap(filePath: string): FeatureMap {
  let raw = fs.readFileSync(filePath)
  if (raw.length < 20) {
    throw new Error(`${filePath}: too short for an FMAP header`)
  }
  if (raw.toString('ascii', 0, 4) !== FMAP_MAGIC) {
    throw new Error(`${filePath}: bad magic`)
  }
  let version = raw.readUInt32LE(4)
  if (version !== FMAP_VERSION) {
    throw new Error(`${filePath}: unsupported version ${version}`)
  }
  let width = raw.readUInt32LE(8)
  let height = raw.readUInt32LE(12)
  let channels = raw.readUInt32LE(16)
  if (width < 1 || height < 1 || channels < 1) {
    throw new Error(`${filePath}: invalid dimensions`)
  }
  let count = width * height * channels
  if (raw.length !== 20 + count * 4) {
    throw new Error(`${filePath}: expected ${20 + count * 4} bytes, got ${raw.length}`)
  }
  let data = new Float32Array(count)
  for (let i = 0; i < count; i++) {
    data[i] = raw.readFloatLE(20 + i * 4)
    if (!Number.isFinite(data[i])) {
      throw new Error(`${filePath}: non-finite value at index ${i}`)
    }
  }
  return { width, height, channels, data }
}

export interface ManifestRow {
  imageId: string
  resolutionTag: string
  relativePath: string
  width: number
  height: number
  channels: number
}

/** Tab-separated manifest, one row per tensor file, '#' comment lines. */
export function writeManifest(rows: ManifestRow[], datasetName: string, filePath: string): void {
  let lines: string[] = []
  if (datasetName) lines.push(`# dataset: ${datasetName}`)
  for (let row of rows) {
    lines.push(
      [row.imageId, row.resolutionTag, row.relativePath,
       row.width, row.height, row.channels].join('\t'),
    )
  }
  let tmp = filePath + `.tmp${process.pid}`
  fs.writeFileSync(tmp, lines.join('\n') + '\n')
  fs.renameSync(tmp, filePath)
}

export function ensureDir(dirPath: string): void {
  fs.mkdirSync(path.resolve(dirPath), { recursive: true })
}
