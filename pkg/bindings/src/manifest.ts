/**
 * Dataset manifest JSON: the case list the native engine's subcommands
 * consume.  Paths inside a manifest are relative to the manifest file.
 */

import * as fs from "node:fs";

export interface ManifestCase {
  case_id: string;
  label: string;
  prediction?: string;
  logits?: string;
  image?: string;
}

export interface Manifest {
  cases: ManifestCase[];
  classes: string[];
  hec?: Record<string, string[]>;
  split?: string;
}

export class ManifestError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "ManifestError";
  }
}

function asString(value: unknown, what: string): string {
  if (typeof value !== "string" || value.length === 0) {
    throw new ManifestError(`${what} must be a non-empty string`);
  }
  return value;
}

export function parseManifest(text: string, source = "<memory>"): Manifest {
  let doc: unknown;
  try {
    doc = JSON.parse(text);
  } catch (err) {
    throw new ManifestError(`${source}: not valid JSON (${(err as Error).message})`);
  }
  if (typeof doc !== "object" || doc === null || Array.isArray(doc)) {
    throw new ManifestError(`${source}: manifest must be a JSON object`);
  }
  const raw = doc as Record<string, unknown>;
  if (!Array.isArray(raw.cases)) {
    throw new ManifestError(`${source}: missing "cases" array`);
  }
  if (!Array.isArray(raw.classes) || raw.classes.length === 0) {
    throw new ManifestError(`${source}: missing "classes" array`);
  }
  const classes = raw.classes.map((c, i) => asString(c, `${source}: classes[${i}]`));
  const cases: ManifestCase[] = raw.cases.map((entry, i) => {
    if (typeof entry !== "object" || entry === null) {
      throw new ManifestError(`${source}: cases[${i}] must be an object`);
    }
    const e = entry as Record<string, unknown>;
    const out: ManifestCase = {
      case_id: asString(e.case_id, `${source}: cases[${i}].case_id`),
      label: asString(e.label, `${source}: cases[${i}].label`),
    };
    for (const key of ["prediction", "logits", "image"] as const) {
      if (e[key] !== undefined && e[key] !== null) {
        out[key] = asString(e[key], `${source}: cases[${i}].${key}`);
      }
    }
    return out;
  });
  const manifest: Manifest = { cases, classes };
  if (raw.hec !== undefined) {
    manifest.hec = raw.hec as Record<string, string[]>;
  }
  if (raw.split !== undefined) {
    manifest.split = asString(raw.split, `${source}: split`);
  }
  return manifest;
}

export function loadManifest(path: string): Manifest {
  return parseManifest(fs.readFileSync(path, "utf-8"), path);
}

/** Serialize with the same conventions as the native writer: sorted keys,
 * two-space indent, trailing newline. */
export function writeManifest(path: string, manifest: Manifest): void {
  const doc: Record<string, unknown> = {
    cases: manifest.cases,
    classes: manifest.classes,
  };
  if (manifest.hec && Object.keys(manifest.hec).length > 0) {
    doc.hec = manifest.hec;
  }
  if (manifest.split !== undefined) {
    doc.split = manifest.split;
  }
  fs.writeFileSync(path, stableStringify(doc) + "\n");
}

function stableStringify(value: unknown): string {
  return JSON.stringify(sortKeys(value), null, 2);
}

function sortKeys(value: unknown): unknown {
  if (Array.isArray(value)) {
    return value.map(sortKeys);
  }
  if (typeof value === "object" && value !== null) {
    const out: Record<string, unknown> = {};
    for (const key of Object.keys(value as Record<string, unknown>).sort()) {
      out[key] = sortKeys((value as Record<string, unknown>)[key]);
    }
    return out;
  }
  return value;
}
