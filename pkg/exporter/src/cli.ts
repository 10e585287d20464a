#!/usr/bin/env node
/**
 * specxai-export --model <builtin id | path/to/model.json> --res 32 --out dir/
 *
 * Converts a small TensorFlow.js classifier into the specxai
 * interchange format (manifest + float32 blob), folding inference-time
 * batch normalization.  Input resolution is clamped (default 64) so the
 * resulting explicit operators stay within the analysis element budget.
 */

import * as path from "node:path";
import * as fs from "node:fs";

import type * as tf from "@tensorflow/tfjs";

import { exportModel, UnsupportedOpError } from "./convert.js";
import { DEMO_MODELS } from "./demo.js";
import { loadLayersModelFromDisk } from "./loader.js";

interface Args {
  model: string;
  res: number;
  out: string;
  name: string | null;
  maxRes: number;
  foldBatchnorm: boolean;
}

function parseArgs(argv: string[]): Args {
  const args: Args = {
    model: "",
    res: 32,
    out: "export",
    name: null,
    maxRes: 64,
    foldBatchnorm: true,
  };
  for (let i = 0; i < argv.length; i++) {
    const flag = argv[i];
    const next = () => {
      i += 1;
      if (i >= argv.length) throw new Error(`missing value for ${flag}`);
      return argv[i];
    };
    if (flag === "--model") args.model = next();
    else if (flag === "--res") args.res = Number(next());
    else if (flag === "--out") args.out = next();
    else if (flag === "--name") args.name = next();
    else if (flag === "--max-res") args.maxRes = Number(next());
    else if (flag === "--no-fold-batchnorm") args.foldBatchnorm = false;
    else if (flag === "--help" || flag === "-h") {
      console.log(
        "usage: specxai-export --model <id|model.json> [--res 32] " +
          "[--out dir] [--name n] [--max-res 64] [--no-fold-batchnorm]",
      );
      process.exit(0);
    } else throw new Error(`unknown flag ${flag}`);
  }
  if (!args.model) throw new Error("--model is required");
  return args;
}

async function resolveModel(args: Args): Promise<tf.LayersModel> {
  const builtin = DEMO_MODELS[args.model];
  if (builtin) return builtin(args.res);
  return loadLayersModelFromDisk(args.model);
}

export async function main(argv: string[]): Promise<number> {
  let args: Args;
  try {
    args = parseArgs(argv);
  } catch (err) {
    console.error(`usage error: ${(err as Error).message}`);
    return 2;
  }
  if (args.res > args.maxRes) {
    console.error(
      `resolution ${args.res} exceeds the clamp ${args.maxRes} ` +
        "(large operators defeat the SVD analysis; pass --max-res to override)",
    );
    return 2;
  }
  try {
    const model = await resolveModel(args);
    const name = args.name ?? path.basename(args.model).replace(/\.json$/, "");
    const manifestPath = path.join(args.out, "model.sxm");
    const plan = exportModel(model, manifestPath, {
      name,
      sourceName: args.model,
      foldBatchnorm: args.foldBatchnorm,
    });
    fs.writeFileSync(
      path.join(args.out, "export_plan.json"),
      JSON.stringify(plan, null, 2) + "\n",
    );
    console.log(`exported ${name} -> ${manifestPath}`);
    for (const row of plan.rows) {
      console.log(`  ${row.source} [${row.op}] -> ${row.kind}`);
    }
    return 0;
  } catch (err) {
    if (err instanceof UnsupportedOpError) {
      console.error(`export rejected: ${err.message}`);
      return 3;
    }
    console.error(`export failed: ${(err as Error).message}`);
    return 1;
  }
}

const isDirectRun =
  process.argv[1] && path.resolve(process.argv[1]) === path.resolve(
    new URL(import.meta.url).pathname,
  );
if (isDirectRun) {
  main(process.argv.slice(2)).then((code) => process.exit(code));
}
