/**
 * In-process bindings for the bag-of-tokens index files produced by the
 * semidx engine ("SIDRBOT1" binaries).
 *
 * The surface is intentionally tiny: open an index, run beta search with a
 * sparse query vector, mine an answer-free negative passage.  Scores are
 * computed exactly the way the core engine computes them (float64
 * accumulation, query dimensions visited in ascending order, ties broken by
 * ascending passage ordinal), so results agree with the CLI bit for bit.
 * Negative mining replays the engine's SplitMix64 stream, which exists
 * precisely so that any runtime can reproduce the same choice.
 */

import { readFileSync } from "node:fs";

export class EngineError extends Error {
  code: number;
  constructor(message: string, code: number) {
    super(message);
    this.name = new.target.name;
    this.code = code;
  }
}

export class FormatError extends EngineError {
  constructor(message: string) {
    super(message, 3);
  }
}

export class ContractError extends EngineError {
  constructor(message: string) {
    super(message, 3);
  }
}

export class MinerError extends EngineError {
  constructor(message: string) {
    super(message, 4);
  }
}

const BOT_MAGIC = "SIDRBOT1";
const INDEX_VERSION = 1;
const MASK64 = (1n << 64n) - 1n;

export class SplitMix64 {
  private state: bigint;

  constructor(seed: number | bigint) {
    this.state = BigInt(seed) & MASK64;
  }

  nextU64(): bigint {
    this.state = (this.state + 0x9e3779b97f4a7c15n) & MASK64;
    let z = this.state;
    z = ((z ^ (z >> 30n)) * 0xbf58476d1ce4e5b9n) & MASK64;
    z = ((z ^ (z >> 27n)) * 0x94d049bb133111ebn) & MASK64;
    return z ^ (z >> 31n);
  }

  randrange(n: number): number {
    if (n <= 0) throw new ContractError("randrange needs n > 0");
    return Number(this.nextU64() % BigInt(n));
  }
}

export interface SearchHit {
  ids: string[];
  scores: number[];
}

export interface MinedNegative {
  id: string;
  title: string;
  text: string;
}

class Reader {
  private view: DataView;
  private buf: Buffer;
  off = 0;

  constructor(buf: Buffer, private path: string) {
    this.buf = buf;
    this.view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength);
  }

  private need(n: number): void {
    if (this.off + n > this.buf.byteLength) {
      throw new FormatError(`truncated index file ${this.path}`);
    }
  }

  u16(): number {
    this.need(2);
    const v = this.view.getUint16(this.off, true);
    this.off += 2;
    return v;
  }

  u32(): number {
    this.need(4);
    const v = this.view.getUint32(this.off, true);
    this.off += 4;
    return v;
  }

  str(len: number): string {
    this.need(len);
    const s = this.buf.toString("utf8", this.off, this.off + len);
    this.off += len;
    return s;
  }

  u32Array(count: number): Uint32Array {
    this.need(count * 4);
    const out = new Uint32Array(count);
    for (let i = 0; i < count; i++) {
      out[i] = this.view.getUint32(this.off + i * 4, true);
    }
    this.off += count * 4;
    return out;
  }

  get exhausted(): boolean {
    return this.off === this.buf.byteLength;
  }
}

export class IndexHandle {
  readonly vocabSize: number;
  readonly passageIds: string[];
  readonly titles: string[];
  readonly texts: string[];
  readonly postings: Map<number, Uint32Array>;
  private open = true;

  constructor(vocabSize: number, passageIds: string[], titles: string[],
              texts: string[], postings: Map<number, Uint32Array>) {
    this.vocabSize = vocabSize;
    this.passageIds = passageIds;
    this.titles = titles;
    this.texts = texts;
    this.postings = postings;
  }

  get size(): number {
    return this.passageIds.length;
  }

  content(ordinal: number): string {
    return this.titles[ordinal] + " " + this.texts[ordinal];
  }

  assertOpen(): void {
    if (!this.open) throw new ContractError("index handle is closed");
  }

  close(): void {
    this.open = false;
  }
}

export function openIndex(path: string): IndexHandle {
  const buf = readFileSync(path);
  if (buf.length < 8 || buf.toString("latin1", 0, 8) !== BOT_MAGIC) {
    throw new FormatError(`not a bag-of-tokens index: ${path}`);
  }
  const r = new Reader(buf, path);
  r.off = 8;
  const version = r.u32();
  if (version !== INDEX_VERSION) {
    throw new FormatError(`unsupported index version ${version} in ${path}`);
  }
  const vocabSize = r.u32();
  const count = r.u32();
  const ids: string[] = [];
  const titles: string[] = [];
  const texts: string[] = [];
  for (let i = 0; i < count; i++) {
    ids.push(r.str(r.u16()));
    titles.push(r.str(r.u32()));
    texts.push(r.str(r.u32()));
  }
  const nDims = r.u32();
  const postings = new Map<number, Uint32Array>();
  let prevDim = -1;
  for (let i = 0; i < nDims; i++) {
    const dim = r.u32();
    if (dim <= prevDim) throw new FormatError(`postings dims not ascending in ${path}`);
    prevDim = dim;
    const len = r.u32();
    const ordinals = r.u32Array(len);
    for (const o of ordinals) {
      if (o >= count) throw new FormatError(`ordinal ${o} out of range in ${path}`);
    }
    postings.set(dim, ordinals);
  }
  if (!r.exhausted) throw new FormatError(`trailing bytes in index file ${path}`);
  return new IndexHandle(vocabSize, ids, titles, texts, postings);
}

function checkQuery(handle: IndexHandle, dims: ArrayLike<number>,
                    weights: ArrayLike<number>): void {
  handle.assertOpen();
  if (dims.length !== weights.length) {
    throw new ContractError("dims and weights length mismatch");
  }
  let prev = -1;
  for (let i = 0; i < dims.length; i++) {
    const d = dims[i];
    if (!Number.isInteger(d) || d <= prev) {
      throw new ContractError("query dims must be strictly ascending integers");
    }
    if (d >= handle.vocabSize) {
      throw new ContractError(`dim ${d} out of range for vocab size ${handle.vocabSize}`);
    }
    if (!Number.isFinite(weights[i]) || weights[i] === 0) {
      throw new ContractError("query weights must be finite and non-zero");
    }
    prev = d;
  }
}

function accumulateScores(handle: IndexHandle, dims: ArrayLike<number>,
                          weights: ArrayLike<number>): Float64Array {
  const scores = new Float64Array(handle.size);
  for (let i = 0; i < dims.length; i++) {
    const post = handle.postings.get(dims[i]);
    if (post === undefined) continue;
    const w = weights[i];
    for (let j = 0; j < post.length; j++) {
      scores[post[j]] += w;
    }
  }
  return scores;
}

function rankOrdinals(scores: Float64Array, topk: number,
                      includeZeros: boolean): number[] {
  const order = Array.from(scores.keys());
  order.sort((a, b) => (scores[b] > scores[a] ? 1 : scores[b] < scores[a] ? -1 : a - b));
  const out: number[] = [];
  for (const o of order) {
    if (scores[o] === 0 && !includeZeros) continue;
    out.push(o);
    if (out.length === topk) break;
  }
  return out;
}

export function betaSearch(handle: IndexHandle, dims: ArrayLike<number>,
                           weights: ArrayLike<number>, topk: number,
                           includeZeros = false): SearchHit {
  checkQuery(handle, dims, weights);
  const scores = accumulateScores(handle, dims, weights);
  const picked = rankOrdinals(scores, topk, includeZeros);
  return {
    ids: picked.map((o) => handle.passageIds[o]),
    scores: picked.map((o) => scores[o]),
  };
}

/** Mirror of the engine's answer normalization: lowercase, collapse runs of
 * whitespace, exact substring containment. */
export function containsAnswer(content: string, answers: readonly string[]): boolean {
  const normalize = (s: string) => s.toLowerCase().split(/\s+/).filter(Boolean).join(" ");
  const haystack = normalize(content);
  return answers.some((a) => a !== "" && haystack.includes(normalize(a)));
}

export function mineNegative(handle: IndexHandle, dims: ArrayLike<number>,
                             weights: ArrayLike<number>, answers: readonly string[],
                             m: number, seed: number | bigint): MinedNegative {
  checkQuery(handle, dims, weights);
  const usable = answers.filter((a) => a !== "");
  if (usable.length === 0) {
    throw new ContractError("negative mining requires at least one answer string");
  }
  if (m < 1) throw new ContractError("miner pool size m must be >= 1");
  const rng = new SplitMix64(seed);
  const scores = accumulateScores(handle, dims, weights);
  const ranked = rankOrdinals(scores, m, false);
  const negatives = ranked.filter((o) => !containsAnswer(handle.content(o), usable));
  let chosen: number;
  if (negatives.length > 0) {
    chosen = negatives[rng.randrange(negatives.length)];
  } else {
    if (handle.size === 0) throw new MinerError("cannot mine from an empty corpus");
    const start = rng.randrange(handle.size);
    let found = -1;
    for (let step = 0; step < handle.size; step++) {
      const o = (start + step) % handle.size;
      if (!containsAnswer(handle.content(o), usable)) {
        found = o;
        break;
      }
    }
    if (found < 0) throw new MinerError("every corpus passage contains an answer string");
    chosen = found;
  }
  return {
    id: handle.passageIds[chosen],
    title: handle.titles[chosen],
    text: handle.texts[chosen],
  };
}
