/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const score_curve: (a: number, b: number) => [number, number];
export const simulate_feed: (a: number, b: number, c: number, d: number) => [number, number];
export const slashing_game: (a: number, b: number, c: number, d: number, e: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
