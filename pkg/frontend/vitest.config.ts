import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "node",
    include: ["tests/**/*.test.ts"],
    // the integration test boots a real python service
    testTimeout: 60000,
    hookTimeout: 60000,
  },
});
