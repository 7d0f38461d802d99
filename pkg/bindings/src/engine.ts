/**
 * Subprocess client for the native calibration engine.
 *
 * The binding talks to the engine exclusively through its public command
 * line and file formats: CALV1 volumes in, JSON reports and float64
 * gradient volumes out.  Loss gradients round-trip as raw float64, so
 * values seen here are bit-identical to the engine's own.
 *
 * All calls are synchronous and re-entrant: each one works in a private
 * temporary directory and spawns exactly one engine process.  The binding
 * itself never creates threads; `jobs` is forwarded to the engine only
 * when the caller asks for it.
 */

import { spawnSync } from "node:child_process";
import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";

import { TensorView, checkView, readVolume, writeVolume } from "./calv.js";

export type KernelName = "hard" | "soft";

export interface EngineOptions {
  /** Command prefix for the engine CLI; defaults to $SEGCALIB_BIN or "segcalib". */
  command?: string[];
}

export interface AceLossOptions {
  bins?: number;
  kernel?: KernelName;
  lam?: number;
  includeBackground?: boolean;
  /** Treat channels as independent marginals (skip the softmax-sum check). */
  marginal?: boolean;
}

export interface AceLossResult {
  value: number;
  grad: TensorView;
  bins: number;
  kernel: KernelName;
  lam: number;
}

export interface MetricsOptions {
  bins?: number;
  kernel?: KernelName;
  includeBackground?: boolean;
  missing?: "skip" | "include";
  jobs?: number;
}

export interface TemperatureOptions {
  bins?: number;
  kernel?: KernelName;
  epochs?: number;
  lr?: number;
}

export class EngineError extends Error {
  constructor(
    message: string,
    readonly exitCode: number | null = null,
    readonly stderr = "",
  ) {
    super(message);
    this.name = "EngineError";
  }
}

function defaultCommand(): string[] {
  const env = process.env.SEGCALIB_BIN;
  if (env && env.trim().length > 0) {
    return env.trim().split(/\s+/);
  }
  return ["segcalib"];
}

function isFloatView(view: TensorView): boolean {
  return view.dtype === "float32" || view.dtype === "float64";
}

function isIntView(view: TensorView): boolean {
  return view.dtype === "uint8" || view.dtype === "uint16";
}

function sameShape(a: readonly number[], b: readonly number[]): boolean {
  return a.length === b.length && a.every((d, i) => d === b[i]);
}

export class Engine {
  private readonly command: string[];

  constructor(options: EngineOptions = {}) {
    this.command = options.command ?? defaultCommand();
    if (this.command.length === 0) {
      throw new EngineError("engine command must not be empty");
    }
  }

  private run(args: string[]): string {
    const [head, ...rest] = this.command;
    const proc = spawnSync(head, [...rest, ...args], {
      encoding: "utf-8",
      maxBuffer: 64 * 1024 * 1024,
    });
    if (proc.error) {
      throw new EngineError(
        `failed to launch engine "${this.command.join(" ")}": ${proc.error.message}`,
      );
    }
    if (proc.status !== 0) {
      const detail = (proc.stderr ?? "").trim();
      throw new EngineError(
        `engine exited with code ${proc.status}${detail ? `: ${detail}` : ""}`,
        proc.status,
        proc.stderr ?? "",
      );
    }
    return proc.stdout ?? "";
  }

  private withTempDir<T>(fn: (dir: string) => T): T {
    const dir = fs.mkdtempSync(path.join(os.tmpdir(), "segcalib-bind-"));
    try {
      return fn(dir);
    } finally {
      fs.rmSync(dir, { recursive: true, force: true });
    }
  }

  /**
   * Forward/backward of the binned-ACE loss on one prediction/target pair.
   *
   * `probs` is a float (C, *spatial) view; `labels` is either an integer
   * index map over the spatial grid or, with `marginal`, a float target
   * stack of the same shape as `probs`.  Returns the loss value and a
   * float64 gradient with respect to the probabilities — the host
   * framework owns the softmax and chains through it.
   */
  aceLoss(
    probs: TensorView,
    labels: TensorView,
    options: AceLossOptions = {},
  ): AceLossResult {
    checkView(probs);
    checkView(labels);
    if (!isFloatView(probs)) {
      throw new EngineError(`probs must be float32/float64, got ${probs.dtype}`);
    }
    if (probs.shape.length < 2) {
      throw new EngineError(
        `probs must be (C, *spatial), got rank ${probs.shape.length}`,
      );
    }
    const spatial = probs.shape.slice(1);
    if (sameShape(labels.shape, spatial)) {
      if (!isIntView(labels)) {
        throw new EngineError(
          `index labels must be uint8/uint16, got ${labels.dtype}`,
        );
      }
    } else if (sameShape(labels.shape, probs.shape)) {
      if (!options.marginal) {
        throw new EngineError(
          "per-channel float targets require the marginal option",
        );
      }
    } else {
      throw new EngineError(
        `labels shape [${labels.shape.join(", ")}] matches neither the ` +
          `spatial grid [${spatial.join(", ")}] nor the full stack ` +
          `[${probs.shape.join(", ")}]`,
      );
    }

    return this.withTempDir((dir) => {
      const probsPath = path.join(dir, "probs.calv");
      const labelsPath = path.join(dir, "labels.calv");
      const gradPath = path.join(dir, "grad.calv");
      writeVolume(probsPath, probs);
      writeVolume(labelsPath, labels);
      const args = [
        "ace-loss",
        "--probs", probsPath,
        "--labels", labelsPath,
        "--grad-out", gradPath,
        "--bins", String(options.bins ?? 20),
        "--kernel", options.kernel ?? "soft",
        "--lam", String(options.lam ?? 1.0),
      ];
      if (options.includeBackground) {
        args.push("--include-background");
      }
      if (options.marginal) {
        args.push("--marginal");
      }
      const payload = JSON.parse(this.run(args)) as {
        value: number;
        bins: number;
        kernel: KernelName;
        lam: number;
      };
      return {
        value: payload.value,
        grad: readVolume(gradPath),
        bins: payload.bins,
        kernel: payload.kernel,
        lam: payload.lam,
      };
    });
  }

  /** Run the engine's metrics report over a manifest and return the parsed
   * JSON document (macro/micro reports, per-image entries, protocol). */
  metrics(manifestPath: string, options: MetricsOptions = {}): MetricsReport {
    return this.withTempDir((dir) => {
      const args = [
        "metrics",
        "--manifest", manifestPath,
        "--out", dir,
        "--bins", String(options.bins ?? 20),
        "--kernel", options.kernel ?? "hard",
      ];
      if (options.includeBackground) {
        args.push("--include-background");
      }
      if (options.missing) {
        args.push("--missing", options.missing);
      }
      if (options.jobs !== undefined) {
        args.push("--jobs", String(options.jobs));
      }
      this.run(args);
      const text = fs.readFileSync(path.join(dir, "metrics.json"), "utf-8");
      return JSON.parse(text) as MetricsReport;
    });
  }

  /** Fit a post-hoc temperature on a manifest with logits volumes. */
  fitTemperature(
    manifestPath: string,
    options: TemperatureOptions = {},
  ): TemperatureReport {
    return this.withTempDir((dir) => {
      const args = [
        "temp-scale",
        "--manifest", manifestPath,
        "--out", dir,
        "--bins", String(options.bins ?? 20),
        "--kernel", options.kernel ?? "hard",
      ];
      if (options.epochs !== undefined) {
        args.push("--epochs", String(options.epochs));
      }
      if (options.lr !== undefined) {
        args.push("--lr", String(options.lr));
      }
      this.run(args);
      const text = fs.readFileSync(path.join(dir, "temperature.json"), "utf-8");
      return JSON.parse(text) as TemperatureReport;
    });
  }
}

export interface ClassStats {
  ace: (number | null)[];
  ece: (number | null)[];
  mce: (number | null)[];
  present: boolean[];
  evaluated: boolean[];
  dsc?: (number | null)[];
}

export interface ReportBlock {
  averaging: string;
  defined: boolean;
  num_images: number;
  per_class: ClassStats;
  mean: Record<string, number | null>;
  std?: Record<string, number | null>;
}

export interface Protocol {
  bins: number;
  kernel: KernelName;
  include_background: boolean;
  missing_policy?: string;
}

export interface MetricsReport {
  manifest: string;
  num_cases: number;
  classes: string[];
  protocol: Protocol;
  macro: ReportBlock;
  micro: ReportBlock;
  per_image: Record<string, unknown>[];
  hierarchical?: Record<string, unknown>;
}

export interface TemperatureReport {
  manifest: string;
  protocol: Protocol;
  fit: {
    temperature: number;
    ce_initial: number;
    ce_final: number;
    epochs: number;
    steps: number;
  };
  macro_before: ReportBlock;
  macro_after: ReportBlock;
}
