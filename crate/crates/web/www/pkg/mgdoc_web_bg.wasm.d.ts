/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_groupingdemo_free: (a: number, b: number) => void;
export const __wbg_mgmdemo_free: (a: number, b: number) => void;
export const groupingdemo_group: (a: number, b: number, c: number) => [number, number];
export const groupingdemo_matches_truth: (a: number, b: number, c: number) => number;
export const groupingdemo_n_true_regions: (a: number) => number;
export const groupingdemo_n_words: (a: number) => number;
export const groupingdemo_new: (a: bigint, b: number) => number;
export const mgmdemo_heatmap: (a: number) => [number, number, number, number];
export const mgmdemo_n_regions: (a: number) => number;
export const mgmdemo_n_words: (a: number) => number;
export const mgmdemo_new: (a: bigint, b: number) => [number, number, number];
export const mgmdemo_parents: (a: number) => [number, number];
export const mgmdemo_retrieval_accuracy: (a: number) => [number, number, number];
export const mgmdemo_step: (a: number) => number;
export const mgmdemo_train: (a: number, b: number) => [number, number, number];
export const rel_bucket_curve: (a: number, b: number, c: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_start: () => void;
