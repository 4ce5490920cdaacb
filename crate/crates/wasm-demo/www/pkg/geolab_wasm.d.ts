/* tslint:disable */
/* eslint-disable */

/**
 * Annulus map over the x-y ellipse of the (optionally perturbed)
 * ellipsoid; keeps the map between calls.
 */
export class Annulus {
    free(): void;
    [Symbol.dispose](): void;
    length(): number;
    constructor(a: number, b: number, c: number, eps: number);
    /**
     * `n` iterates from `(phi, y)` as `[phi, y, phi, y, ...]` with `phi`
     * in `[0, 2π)`; stops early if an iterate fails.
     */
    orbit(phi: number, y: number, n: number): Float64Array;
}

/**
 * Labels, periods and monodromy eigenvalues of the principal ellipses,
 * as a JSON string.
 */
export function classify_principal(a: number, b: number, c: number): string;

/**
 * Unit-speed geodesic from `(a, 0, 0)` leaving at angle `theta` to the
 * x-y plane; returns a flat `[x, y, z, x, y, z, ...]` array.
 */
export function geodesic(a: number, b: number, c: number, theta: number, t_end: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_annulus_free: (a: number, b: number) => void;
    readonly annulus_length: (a: number) => number;
    readonly annulus_new: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly annulus_orbit: (a: number, b: number, c: number, d: number) => [number, number];
    readonly classify_principal: (a: number, b: number, c: number) => [number, number, number, number];
    readonly geodesic: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
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
