import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["test/**/*.test.ts"],
    // 3D conv training on the CPU backend is slow; individual tests set
    // longer timeouts where they need them.
    testTimeout: 120_000,
    hookTimeout: 120_000,
    pool: "forks",
  },
});
