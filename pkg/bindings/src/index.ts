/**
 * Node bindings for the panoptic toolkit CLI.
 *
 * Exposes evaluation on id arrays, detection/semantic fusion, and the loss
 * oracles to array-based tooling. The bindings never re-implement any of the
 * core logic: inputs are marshalled into the CLI's documented file formats
 * (PNG maps, JSON sidecars and fixtures) in a temp directory, the CLI runs,
 * and its outputs are parsed back. Crossing the process boundary always
 * copies the data.
 */

import * as fs from 'node:fs';
import * as os from 'node:os';
import * as path from 'node:path';

import { decodePng, encodePng } from './png.js';
import { RunnerOptions, runCli } from './runner.js';

export { CliError, RunnerOptions } from './runner.js';
export { decodePng, encodePng } from './png.js';

/** Category registry in the CLI's categories-file layout. */
export interface Categories {
  categories: { id: number; name?: string; isthing: 0 | 1 }[];
}

/** One panoptic id grid plus its segment-to-class table. */
export interface PanopticArray {
  /** Row-major segment ids (0 = void); length must equal width * height. */
  ids: Int32Array | number[];
  width: number;
  height: number;
  /** segment id -> class id */
  segments: Record<number, number>;
}

export interface PerClassMetrics {
  pq: number | null;
  pq_dagger: number | null;
  tp: number;
  fp: number;
  fn: number;
}

export interface MetricReport {
  pq: number | null;
  pq_dagger: number | null;
  pq_stuff: number | null;
  pq_things: number | null;
  per_class: Record<string, PerClassMetrics>;
  undefined_classes: number[];
}

export interface EvaluateOptions extends RunnerOptions {
  /** Disable the predicted-void false-negative exemption. */
  fnVoidRule?: boolean;
}

export interface Detection {
  /** Center-form box [cx, cy, w, h]. */
  box: [number, number, number, number];
  class_id: number;
  score: number;
  /** 28x28 row-major foreground probabilities (784 values). */
  mask: Float32Array | Float64Array | number[];
}

export interface FusionOptions extends RunnerOptions {
  coverageThreshold?: number;
  stuffMinArea?: number;
  maskThreshold?: number;
}

export interface FusedMap {
  ids: Int32Array;
  width: number;
  height: number;
  segments: Record<number, number>;
}

export interface LossReport {
  semantic: number;
  rpn_objectness: number;
  rpn_box: number;
  roi_class: number;
  roi_box: number;
  roi_mask: number;
  flags: string[];
}

function withTempDir<T>(run: (dir: string) => Promise<T>): Promise<T> {
  const dir = fs.mkdtempSync(path.join(os.tmpdir(), 'panoptikit-'));
  return run(dir).finally(() => fs.rmSync(dir, { recursive: true, force: true }));
}

function idGridToPng(map: PanopticArray): Buffer {
  const { ids, width, height } = map;
  const count = width * height;
  if (ids.length !== count) {
    throw new Error(`id grid has ${ids.length} entries, expected ${count}`);
  }
  const rgb = new Uint8Array(count * 3);
  for (let i = 0; i < count; i++) {
    const id = Number(ids[i]);
    if (id < 0 || id >= 1 << 24) throw new Error(`segment id ${id} does not fit 24 bits`);
    rgb[i * 3] = id & 0xff;
    rgb[i * 3 + 1] = (id >> 8) & 0xff;
    rgb[i * 3 + 2] = (id >> 16) & 0xff;
  }
  return encodePng(rgb, width, height, 3);
}

function sidecarFor(map: PanopticArray): string {
  const segments_info = Object.entries(map.segments)
    .map(([id, categoryId]) => ({ id: Number(id), category_id: categoryId }))
    .sort((a, b) => a.id - b.id);
  return JSON.stringify({ segments_info });
}

function writePanopticDir(dir: string, maps: PanopticArray[]): void {
  fs.mkdirSync(dir, { recursive: true });
  maps.forEach((map, index) => {
    const stem = `img${String(index).padStart(4, '0')}`;
    fs.writeFileSync(path.join(dir, `${stem}.png`), idGridToPng(map));
    fs.writeFileSync(path.join(dir, `${stem}.json`), sidecarFor(map));
  });
}

/**
 * Score predictions against ground truth on in-memory id grids.
 *
 * Accepts a single map pair or two equal-length arrays of pairs. Returns the
 * CLI's JSON report verbatim.
 */
export async function evaluate(
  groundTruth: PanopticArray | PanopticArray[],
  predictions: PanopticArray | PanopticArray[],
  categories: Categories,
  options?: EvaluateOptions,
): Promise<MetricReport> {
  const gtMaps = Array.isArray(groundTruth) ? groundTruth : [groundTruth];
  const predMaps = Array.isArray(predictions) ? predictions : [predictions];
  if (gtMaps.length !== predMaps.length) {
    throw new Error(`got ${gtMaps.length} ground-truth maps but ${predMaps.length} predictions`);
  }
  return withTempDir(async (dir) => {
    const gtDir = path.join(dir, 'gt');
    const predDir = path.join(dir, 'pred');
    writePanopticDir(gtDir, gtMaps);
    writePanopticDir(predDir, predMaps);
    const categoriesPath = path.join(dir, 'categories.json');
    fs.writeFileSync(categoriesPath, JSON.stringify(categories));
    const outPath = path.join(dir, 'report.json');
    const args = [
      'evaluate',
      '--gt-dir', gtDir,
      '--pred-dir', predDir,
      '--categories', categoriesPath,
      '--out', outPath,
    ];
    if (options?.fnVoidRule === false) args.push('--no-fn-void-rule');
    await runCli(args, options);
    return JSON.parse(fs.readFileSync(outPath, 'utf-8')) as MetricReport;
  });
}

/**
 * Fuse instance detections with a semantic class-id grid into a panoptic map.
 *
 * The semantic grid is row-major with class ids in [0, 255] (0 = void).
 * Returns the fused id grid and its segment table.
 */
export async function fuse(
  detections: Detection[],
  semantic: { labels: Uint8Array | Int32Array | number[]; width: number; height: number },
  categories: Categories,
  options?: FusionOptions,
): Promise<FusedMap> {
  const { labels, width, height } = semantic;
  if (labels.length !== width * height) {
    throw new Error(`semantic grid has ${labels.length} entries, expected ${width * height}`);
  }
  const gray = new Uint8Array(width * height);
  for (let i = 0; i < labels.length; i++) {
    const value = Number(labels[i]);
    if (value < 0 || value > 255) throw new Error(`semantic class id ${value} outside 0..255`);
    gray[i] = value;
  }
  return withTempDir(async (dir) => {
    const detPath = path.join(dir, 'detections.json');
    fs.writeFileSync(
      detPath,
      JSON.stringify(detections.map((d) => ({ ...d, mask: Array.from(d.mask) }))),
    );
    const semPath = path.join(dir, 'semantic.png');
    fs.writeFileSync(semPath, encodePng(gray, width, height, 1));
    const categoriesPath = path.join(dir, 'categories.json');
    fs.writeFileSync(categoriesPath, JSON.stringify(categories));
    const outPath = path.join(dir, 'fused.png');
    const args = ['fuse', '--detections', detPath, '--semantic', semPath, '--categories', categoriesPath, '--out', outPath];
    if (options?.coverageThreshold !== undefined) args.push('--coverage-threshold', String(options.coverageThreshold));
    if (options?.stuffMinArea !== undefined) args.push('--stuff-min-area', String(options.stuffMinArea));
    if (options?.maskThreshold !== undefined) args.push('--mask-threshold', String(options.maskThreshold));
    await runCli(args, options);

    const decoded = decodePng(fs.readFileSync(outPath));
    if (decoded.channels < 3) throw new Error('fused PNG is not RGB');
    const ids = new Int32Array(decoded.width * decoded.height);
    for (let i = 0; i < ids.length; i++) {
      ids[i] =
        decoded.data[i * decoded.channels] +
        256 * decoded.data[i * decoded.channels + 1] +
        65536 * decoded.data[i * decoded.channels + 2];
    }
    const sidecar = JSON.parse(fs.readFileSync(outPath.replace(/\.png$/, '.json'), 'utf-8')) as {
      segments_info: { id: number; category_id: number }[];
    };
    const segments: Record<number, number> = {};
    for (const record of sidecar.segments_info) segments[record.id] = record.category_id;
    return { ids, width: decoded.width, height: decoded.height, segments };
  });
}

/**
 * Compute the six forward losses from a fixture bundle (the CLI's
 * documented JSON schema). Saturated losses come back as Infinity.
 */
export async function losses(fixture: object, options?: RunnerOptions): Promise<LossReport> {
  return withTempDir(async (dir) => {
    const fixturePath = path.join(dir, 'fixture.json');
    fs.writeFileSync(fixturePath, JSON.stringify(fixture));
    const outPath = path.join(dir, 'losses.json');
    await runCli(['losses', '--fixture', fixturePath, '--out', outPath], options);
    const raw = JSON.parse(fs.readFileSync(outPath, 'utf-8')) as Record<string, unknown>;
    const num = (key: string): number => {
      const value = raw[key];
      if (value === 'inf') return Infinity;
      if (typeof value !== 'number') throw new Error(`loss report field ${key} is not numeric`);
      return value;
    };
    return {
      semantic: num('semantic'),
      rpn_objectness: num('rpn_objectness'),
      rpn_box: num('rpn_box'),
      roi_class: num('roi_class'),
      roi_box: num('roi_box'),
      roi_mask: num('roi_mask'),
      flags: (raw.flags as string[]) ?? [],
    };
  });
}
