/* tslint:disable */
/* eslint-disable */

/**
 * A generated page of paragraphs, regrouped on demand.
 */
export class GroupingDemo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Per word `x0, y0, x1, y1, group` after grouping with the given gaps.
     */
    group(gap_x: number, gap_y: number): Float64Array;
    /**
     * Whether grouping with these gaps reproduces the generated paragraphs.
     */
    matches_truth(gap_x: number, gap_y: number): boolean;
    n_true_regions(): number;
    n_words(): number;
    constructor(seed: bigint, n_paragraphs: number);
}

/**
 * A tiny model trained on a handful of synthetic forms with MGM only.
 */
export class MgmDemo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Row-major region × word dot products for the held-out document.
     */
    heatmap(): Float64Array;
    n_regions(): number;
    n_words(): number;
    /**
     * `n_docs` training forms plus one held-out form for display.
     */
    constructor(seed: bigint, n_docs: number);
    /**
     * Region of each word of the held-out document, in column order.
     */
    parents(): Uint32Array;
    /**
     * Share of held-out words whose highest-scoring region is their parent.
     */
    retrieval_accuracy(): number;
    step(): number;
    /**
     * Runs `n` more steps; returns the mean MGM loss over them.
     */
    train(n: number): number;
}

/**
 * `(delta, bucket)` pairs for `samples` offsets evenly spread over [-1, 1].
 */
export function rel_bucket_curve(side: number, linear_max: number, samples: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_groupingdemo_free: (a: number, b: number) => void;
    readonly __wbg_mgmdemo_free: (a: number, b: number) => void;
    readonly groupingdemo_group: (a: number, b: number, c: number) => [number, number];
    readonly groupingdemo_matches_truth: (a: number, b: number, c: number) => number;
    readonly groupingdemo_n_true_regions: (a: number) => number;
    readonly groupingdemo_n_words: (a: number) => number;
    readonly groupingdemo_new: (a: bigint, b: number) => number;
    readonly mgmdemo_heatmap: (a: number) => [number, number, number, number];
    readonly mgmdemo_n_regions: (a: number) => number;
    readonly mgmdemo_n_words: (a: number) => number;
    readonly mgmdemo_new: (a: bigint, b: number) => [number, number, number];
    readonly mgmdemo_parents: (a: number) => [number, number];
    readonly mgmdemo_retrieval_accuracy: (a: number) => [number, number, number];
    readonly mgmdemo_step: (a: number) => number;
    readonly mgmdemo_train: (a: number, b: number) => [number, number, number];
    readonly rel_bucket_curve: (a: number, b: number, c: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
