import { execFileSync } from "node:child_process";
import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";

import * as tf from "@tensorflow/tfjs";
import { afterAll, describe, expect, it } from "vitest";

import { exportModel, foldBatchNorm, planExport, UnsupportedOpError } from "../src/convert.js";
import { demoCnn, demoDense, mulberry32 } from "../src/demo.js";
import { writeTensor } from "../src/interchange.js";
import { loadLayersModelFromDisk, saveLayersModelToDisk } from "../src/loader.js";
import { main as cliMain } from "../src/cli.js";

const tmpRoot = fs.mkdtempSync(path.join(os.tmpdir(), "specxai-export-"));
afterAll(() => fs.rmSync(tmpRoot, { recursive: true, force: true }));

function tmpDir(name: string): string {
  const dir = path.join(tmpRoot, name);
  fs.mkdirSync(dir, { recursive: true });
  return dir;
}

/** Run the primary toolkit's CLI; returns stdout. */
function primary(...argv: string[]): string {
  return execFileSync("python3", ["-m", "specxai.cli", ...argv], {
    encoding: "utf8",
  });
}

/** Forward outputs from the primary via inspect-model --eval. */
function primaryForward(modelPath: string, tensorPath: string, rows: number): number[][] {
  const out = primary(
    "inspect-model", "--model", modelPath, "--eval", tensorPath,
  ).trim().split("\n");
  return out.slice(-rows).map((line) => line.split(",").map(Number));
}

function randomBatch(rand: () => number, shape: number[]): Float32Array {
  const n = shape.reduce((a, b) => a * b, 1);
  const data = new Float32Array(n);
  for (let i = 0; i < n; i++) {
    data[i] = rand() * 2 - 1;
  }
  return data;
}

function maxAbsDiff(a: number[][], b: Float32Array, cols: number): number {
  let worst = 0;
  for (let i = 0; i < a.length; i++) {
    for (let j = 0; j < cols; j++) {
      worst = Math.max(worst, Math.abs(a[i][j] - b[i * cols + j]));
    }
  }
  return worst;
}

describe("batch norm folding", () => {
  it("identity parameters leave weights unchanged", () => {
    const eps = 1e-3;
    const target = {
      kind: "dense" as const,
      weights: Float32Array.from([1, 2, 3, 4, 5, 6]),
      weightShape: [2, 3],
      bias: Float32Array.from([0.5, -0.5]),
      outChannels: 2,
      extra: {},
    };
    foldBatchNorm(
      target,
      Float32Array.from([1, 1]),
      Float32Array.from([0, 0]),
      Float32Array.from([0, 0]),
      Float32Array.from([1 - eps, 1 - eps]),
      eps,
    );
    expect(Array.from(target.weights)).toEqual([1, 2, 3, 4, 5, 6]);
    expect(Array.from(target.bias!)).toEqual([0.5, -0.5]);
  });

  it("folded model matches the unfolded source forward pass", () => {
    const model = demoCnn(16, 5);
    const dir = tmpDir("bn-fold");
    exportModel(model, path.join(dir, "model.sxm"), { name: "bn-fold" });
    const rand = mulberry32(99);
    const batch = randomBatch(rand, [4, 16, 16, 3]);
    writeTensor(path.join(dir, "probe.sxt"), batch, [4, 16, 16, 3]);
    const ours = primaryForward(
      path.join(dir, "model.sxm"), path.join(dir, "probe.sxt"), 4,
    );
    const theirs = model.predict(tf.tensor(batch, [4, 16, 16, 3])) as tf.Tensor;
    expect(maxAbsDiff(ours, theirs.dataSync() as Float32Array, 10)).toBeLessThan(1e-4);
  });
});

describe("cross-runtime agreement", () => {
  it("dense model forward outputs agree within 1e-4 on 10 random inputs", () => {
    const model = demoDense();
    const dir = tmpDir("dense");
    exportModel(model, path.join(dir, "model.sxm"), { name: "demo-dense" });
    const rand = mulberry32(7);
    const batch = randomBatch(rand, [10, 12]);
    writeTensor(path.join(dir, "probe.sxt"), batch, [10, 12]);
    const ours = primaryForward(
      path.join(dir, "model.sxm"), path.join(dir, "probe.sxt"), 10,
    );
    const theirs = model.predict(tf.tensor(batch, [10, 12])) as tf.Tensor;
    expect(maxAbsDiff(ours, theirs.dataSync() as Float32Array, 4)).toBeLessThan(1e-4);
  });

  it("32x32 CNN forward outputs agree within 1e-4 on 10 random inputs", () => {
    const model = demoCnn(32);
    const dir = tmpDir("cnn");
    exportModel(model, path.join(dir, "model.sxm"), { name: "demo-cnn" });
    const rand = mulberry32(13);
    const batch = randomBatch(rand, [10, 32, 32, 3]);
    writeTensor(path.join(dir, "probe.sxt"), batch, [10, 32, 32, 3]);
    const ours = primaryForward(
      path.join(dir, "model.sxm"), path.join(dir, "probe.sxt"), 10,
    );
    const theirs = model.predict(tf.tensor(batch, [10, 32, 32, 3])) as tf.Tensor;
    expect(maxAbsDiff(ours, theirs.dataSync() as Float32Array, 10)).toBeLessThan(1e-4);
  });

  it("round trip through tfjs disk artifacts preserves the export", async () => {
    const source = demoDense();
    const saved = await saveLayersModelToDisk(source, tmpDir("tfjs-artifacts"));
    const loaded = await loadLayersModelFromDisk(saved);
    const dir = tmpDir("from-disk");
    exportModel(loaded, path.join(dir, "model.sxm"), { name: "from-disk" });
    const rand = mulberry32(21);
    const batch = randomBatch(rand, [5, 12]);
    writeTensor(path.join(dir, "probe.sxt"), batch, [5, 12]);
    const ours = primaryForward(
      path.join(dir, "model.sxm"), path.join(dir, "probe.sxt"), 5,
    );
    const theirs = source.predict(tf.tensor(batch, [5, 12])) as tf.Tensor;
    expect(maxAbsDiff(ours, theirs.dataSync() as Float32Array, 4)).toBeLessThan(1e-4);
  });
});

describe("end-to-end analysis of an export", () => {
  it("primary explain runs on the exported 32x32 CNN", () => {
    const model = demoCnn(32);
    const dir = tmpDir("e2e");
    exportModel(model, path.join(dir, "model.sxm"), { name: "demo-cnn" });
    const rand = mulberry32(31);
    const x = randomBatch(rand, [32, 32, 3]);
    writeTensor(path.join(dir, "x.sxt"), x, [32, 32, 3]);
    primary(
      "explain",
      "--model", path.join(dir, "model.sxm"),
      "--input", path.join(dir, "x.sxt"),
      "--reduce",
      "--out", path.join(dir, "report"),
    );
    const summary = JSON.parse(
      fs.readFileSync(path.join(dir, "report", "symbolic.json"), "utf8"),
    );
    expect(Math.abs(summary.residual)).toBeLessThan(1e-5);
    expect(summary.terms.length).toBeGreaterThan(0);
    expect(fs.existsSync(path.join(dir, "report", "sv_0.pgm"))).toBe(true);
  });
});

describe("plan validation", () => {
  it("rejects unsupported activations before writing", () => {
    const model = tf.sequential({
      layers: [
        tf.layers.dense({ inputShape: [4], units: 3, activation: "softmax" }),
      ],
    });
    expect(() => planExport(model, "softmax-model")).toThrow(UnsupportedOpError);
    expect(() => planExport(model, "softmax-model")).toThrow(/softmax/);
  });

  it("rejects batch norm with folding disabled", () => {
    const model = demoCnn(16);
    expect(() => planExport(model, "demo", false)).toThrow(/folding is disabled/);
  });

  it("maps every supported op in the demo CNN", () => {
    const plan = planExport(demoCnn(32), "demo-cnn");
    const kinds = plan.rows.map((r) => r.kind).join(";");
    expect(kinds).toContain("conv2d");
    expect(kinds).toContain("(folded)");
    expect(kinds).toContain("avg_pool");
    expect(kinds).toContain("flatten");
    expect(kinds).toContain("dense");
  });
});

describe("cli", () => {
  it("clamps the input resolution", async () => {
    const code = await cliMain([
      "--model", "demo-cnn", "--res", "224", "--out", tmpDir("clamped"),
    ]);
    expect(code).toBe(2);
  });

  it("exports a builtin model and writes the plan", async () => {
    const out = tmpDir("cli-out");
    const code = await cliMain(["--model", "demo-dense", "--out", out]);
    expect(code).toBe(0);
    expect(fs.existsSync(path.join(out, "model.sxm"))).toBe(true);
    expect(fs.existsSync(path.join(out, "model.bin"))).toBe(true);
    const plan = JSON.parse(
      fs.readFileSync(path.join(out, "export_plan.json"), "utf8"),
    );
    expect(plan.rows.length).toBeGreaterThan(0);
  });

  it("reports usage errors", async () => {
    expect(await cliMain(["--res", "32"])).toBe(2);
  });
});
