import * as fs from 'fs'
import * as path from 'path'
import { Backbone } from './backbone'
import { ManifestRow, ensureDir, writeFeatureMap, writeManifest } from './fmap'
import { loadImage } from './image'
import { ResolutionTag, resizeForTag } from './resize'

export interface ImageEntry {
  imageId: string
  path: string
}

export interface ExtractionJob {
  images: ImageEntry[]
  backbone: Backbone
  mode: 'single' | 'multi'
  outDir: string
  datasetName?: string
  /** optional query bbox file to pass through with image pixel sizes added */
  bboxFile?: string
}

export interface ExtractionResult {
  manifestPath: string
  rows: ManifestRow[]
  bboxOutPath?: string
}

const SINGLE_TAGS: ResolutionTag[] = ['base']
const MULTI_TAGS: ResolutionTag[] = ['base', 'up25', 'down25']

/**
 * Read an image list file: one "path" or "path<TAB>image_id" per line,
 * '#' comments allowed.  Ids default to the file name without extension.
 */
export function readImageList(listPath: string): ImageEntry[] {
  let entries: ImageEntry[] = []
  let seen = new Set<string>()
  let base = path.dirname(listPath)
  for (let line of fs.readFileSync(listPath, 'utf-8').split('\n')) {
    line = line.trim()
    if (!line || line.startsWith('#')) continue
    let [imagePath, id] = line.split('\t')
    let imageId = id || path.basename(imagePath).replace(/\.[^.]+$/, '')
    if (seen.has(imageId)) {
      throw new Error(`duplicate image id ${imageId} in ${listPath}`)
    }
    seen.add(imageId)
    entries.push({
      imageId,
      path: path.isAbsolute(imagePath) ? imagePath : path.join(base, imagePath),
    })
  }
  if (entries.length === 0) throw new Error(`no images listed in ${listPath}`)
  return entries
}

/**
 * Run the backbone over every image at every configured resolution and
 * write one FMAP file per (image, resolution) plus the manifest.
 */
export function extract(job: ExtractionJob): ExtractionResult {
  let tags = job.mode === 'multi' ? MULTI_TAGS : SINGLE_TAGS
  ensureDir(job.outDir)
  ensureDir(path.join(job.outDir, 'maps'))
  let rows: ManifestRow[] = []
  let imageSizes = new Map<string, { width: number; height: number }>()

  for (let entry of job.images) {
    let image = loadImage(entry.path)
    imageSizes.set(entry.imageId, { width: image.width, height: image.height })
    for (let tag of tags) {
      let resized = resizeForTag(image, tag)
      let features = job.backbone.run(resized)
      if (features.channels !== job.backbone.channels) {
        throw new Error(`backbone emitted ${features.channels} channels, ` +
          `expected ${job.backbone.channels}`)
      }
      let rel = path.join('maps', `${entry.imageId}.${tag}.fmap`)
      writeFeatureMap(features, path.join(job.outDir, rel))
      rows.push({
        imageId: entry.imageId,
        resolutionTag: tag,
        relativePath: rel,
        width: features.width,
        height: features.height,
        channels: features.channels,
      })
    }
  }

  let manifestPath = path.join(job.outDir, 'features.manifest')
  writeManifest(rows, job.datasetName ?? '', manifestPath)

  let bboxOutPath: string | undefined
  if (job.bboxFile) {
    bboxOutPath = path.join(job.outDir, 'queries.bbox')
    passThroughBboxes(job.bboxFile, imageSizes, bboxOutPath)
  }
  return { manifestPath, rows, bboxOutPath }
}

/**
 * Re-emit a "image_id x0 y0 x1 y1" bbox file with the pixel size of each
 * image appended, which is what the search side needs to project boxes
 * onto feature-map cells.
 */
function passThroughBboxes(
  bboxFile: string,
  sizes: Map<string, { width: number; height: number }>,
  outPath: string,
): void {
  let lines: string[] = []
  for (let line of fs.readFileSync(bboxFile, 'utf-8').split('\n')) {
    line = line.trim()
    if (!line || line.startsWith('#')) continue
    let fields = line.split(/\s+/)
    if (fields.length !== 5) {
      throw new Error(`bbox line must be "image_id x0 y0 x1 y1": ${line}`)
    }
    let size = sizes.get(fields[0])
    if (!size) {
      throw new Error(`bbox for unknown image ${fields[0]}`)
    }
    lines.push(
      [fields[0], fields[1], fields[2], fields[3], fields[4],
       size.width, size.height].join('\t'),
    )
  }
  let tmp = outPath + `.tmp${process.pid}`
  fs.writeFileSync(tmp, lines.join('\n') + '\n')
  fs.renameSync(tmp, outPath)
}
