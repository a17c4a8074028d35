/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_encounter_free: (a: number, b: number) => void;
export const ble_payloads: (a: number, b: number, c: number) => [number, number, number, number];
export const decode_payload: (a: number, b: number) => [number, number, number, number];
export const encounter: (a: number, b: number) => [number, number, number];
export const encounter_complementary: (a: number) => number;
export const encounter_ebid_a: (a: number) => [number, number];
export const encounter_ebid_b: (a: number) => [number, number];
export const encounter_etl_a: (a: number) => [number, number];
export const encounter_etl_b: (a: number) => [number, number];
export const encounter_rtl_a: (a: number) => [number, number];
export const encounter_rtl_b: (a: number) => [number, number];
export const run_trace: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
