#!/usr/bin/env node
import { createBackbone } from './backbone'
import { extract, readImageList } from './extract'

const USAGE = `usage: fmap-extract extract --images <list-file> --out <dir>
                    [--backbone <name>] [--layer <name>]
                    [--mode single|multi] [--dataset <name>]
                    [--bbox-file <path>]

  --images    text file, one "path" or "path<TAB>image_id" per line
  --out       output directory (maps/ tensors + features.manifest)
  --backbone  feature extractor (default: seeded-cnn)
  --layer     which activation to export (default: stage3)
  --mode      single resolution or the 0%/+25%/-25% triple (default: multi)
  --dataset   dataset name recorded in the manifest
  --bbox-file query bounding boxes to pass through with image sizes added
`

function parseArgs(argv: string[]): Map<string, string> {
  let args = new Map<string, string>()
  for (let i = 0; i < argv.length; i += 2) {
    let key = argv[i]
    if (!key.startsWith('--') || i + 1 >= argv.length) {
      throw new Error(`malformed arguments near ${key}`)
    }
    args.set(key.slice(2), argv[i + 1])
  }
  return args
}

export function main(argv: string[]): number {
  if (argv[0] !== 'extract') {
    process.stderr.write(USAGE)
    return 2
  }
  let args: Map<string, string>
  try {
    args = parseArgs(argv.slice(1))
  } catch (err) {
    process.stderr.write(`${(err as Error).message}\n${USAGE}`)
    return 2
  }
  let images = args.get('images')
  let out = args.get('out')
  if (!images || !out) {
    process.stderr.write('--images and --out are required\n' + USAGE)
    return 2
  }
  let mode = args.get('mode') ?? 'multi'
  if (mode !== 'single' && mode !== 'multi') {
    process.stderr.write(`--mode must be single or multi, got ${mode}\n`)
    return 2
  }
  try {
    let backbone = createBackbone(args.get('backbone') ?? 'seeded-cnn',
                                  args.get('layer') ?? 'stage3')
    let started = Date.now()
    let result = extract({
      images: readImageList(images),
      backbone,
      mode,
      outDir: out,
      datasetName: args.get('dataset') ?? '',
      bboxFile: args.get('bbox-file'),
    })
    let elapsed = ((Date.now() - started) / 1000).toFixed(2)
    process.stdout.write(
      `extracted ${result.rows.length} tensors ` +
      `(backbone=${backbone.name}/${backbone.layer}, D=${backbone.channels}) ` +
      `in ${elapsed}s -> ${result.manifestPath}\n`,
    )
    if (result.bboxOutPath) {
      process.stdout.write(`bbox passthrough -> ${result.bboxOutPath}\n`)
    }
    return 0
  } catch (err) {
    process.stderr.write(`error: ${(err as Error).message}\n`)
    return 3
  }
}

if (require.main === module) {
  process.exit(main(process.argv.slice(2)))
}
