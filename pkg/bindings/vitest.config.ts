import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["test/**/*.test.ts"],
    testTimeout: 180_000,
    hookTimeout: 60_000,
    // Engine calls are subprocess-bound; run files serially so timing
    // stays predictable.
    fileParallelism: false,
  },
});
