/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const coverage_demo: (a: number, b: number, c: number) => [number, number, number, number];
export const depth_frame: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const pe_similarity: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
