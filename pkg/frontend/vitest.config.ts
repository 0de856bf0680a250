import { defineConfig } from "vitest/config";

// default run: unit tests only; `npm run test:e2e` spawns the real server
export default defineConfig({
  test: {
    include: ["tests/**/*.test.ts"],
    exclude: ["tests/e2e.test.ts", "**/node_modules/**"],
  },
});
