/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_annulus_free: (a: number, b: number) => void;
export const annulus_length: (a: number) => number;
export const annulus_new: (a: number, b: number, c: number, d: number) => [number, number, number];
export const annulus_orbit: (a: number, b: number, c: number, d: number) => [number, number];
export const classify_principal: (a: number, b: number, c: number) => [number, number, number, number];
export const geodesic: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
