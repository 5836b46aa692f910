/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demo_free: (a: number, b: number) => void;
export const demo_frame: (a: number) => [number, number, number, number];
export const demo_new: (a: number, b: number) => [number, number, number];
export const demo_orbit: (a: number, b: number, c: number) => void;
export const demo_selected_voxels: (a: number) => number;
export const demo_set_removed: (a: number, b: number) => void;
export const demo_size: (a: number) => number;
export const demo_stroke: (a: number, b: number, c: number, d: number) => [number, number, number];
export const demo_undo: (a: number) => [number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_start: () => void;
