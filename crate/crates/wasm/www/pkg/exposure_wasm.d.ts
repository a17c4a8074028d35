/* tslint:disable */
/* eslint-disable */

/**
 * Both views of one encounter between phones A and B.
 */
export class Encounter {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    /**
     * A's request token is B's upload token and vice versa.
     */
    readonly complementary: boolean;
    readonly ebid_a: string;
    readonly ebid_b: string;
    readonly etl_a: string;
    readonly etl_b: string;
    readonly rtl_a: string;
    readonly rtl_b: string;
}

/**
 * Advertising and scan-response payloads, hex, separated by a newline.
 */
export function ble_payloads(seed: number, version: number, tx_gain: number): string;

/**
 * Human-readable decode of one hex payload.
 */
export function decode_payload(hex_bytes: string): string;

export function encounter(seed_a: number, seed_b: number): Encounter;

/**
 * Runs `trace` with default settings and returns the report summary.
 */
export function run_trace(trace: string, seed: number, stateless: boolean): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_encounter_free: (a: number, b: number) => void;
    readonly ble_payloads: (a: number, b: number, c: number) => [number, number, number, number];
    readonly decode_payload: (a: number, b: number) => [number, number, number, number];
    readonly encounter: (a: number, b: number) => [number, number, number];
    readonly encounter_complementary: (a: number) => number;
    readonly encounter_ebid_a: (a: number) => [number, number];
    readonly encounter_ebid_b: (a: number) => [number, number];
    readonly encounter_etl_a: (a: number) => [number, number];
    readonly encounter_etl_b: (a: number) => [number, number];
    readonly encounter_rtl_a: (a: number) => [number, number];
    readonly encounter_rtl_b: (a: number) => [number, number];
    readonly run_trace: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
