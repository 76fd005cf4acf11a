/** Subprocess plumbing for invoking the core CLI. */

import { spawn } from 'node:child_process';

/** How to start the core CLI; overridable per call or via PANOPTIKIT_CLI. */
export interface RunnerOptions {
  /** Command argv prefix, e.g. ["python3", "-m", "panoptikit"]. */
  cliCommand?: string[];
}

export function cliCommand(options?: RunnerOptions): string[] {
  if (options?.cliCommand?.length) return options.cliCommand;
  const fromEnv = process.env.PANOPTIKIT_CLI;
  if (fromEnv) return fromEnv.split(' ').filter(Boolean);
  return ['python3', '-m', 'panoptikit'];
}

export class CliError extends Error {
  constructor(
    message: string,
    readonly exitCode: number,
    readonly stderr: string,
  ) {
    super(message);
    this.name = 'CliError';
  }
}

/** Run one CLI subcommand; resolves with stdout, rejects with CliError on nonzero exit. */
export function runCli(args: string[], options?: RunnerOptions): Promise<string> {
  const [command, ...prefix] = cliCommand(options);
  return new Promise((resolve, reject) => {
    const child = spawn(command, [...prefix, ...args], { stdio: ['ignore', 'pipe', 'pipe'] });
    let stdout = '';
    let stderr = '';
    child.stdout.on('data', (piece) => (stdout += piece));
    child.stderr.on('data', (piece) => (stderr += piece));
    child.on('error', reject);
    child.on('close', (code) => {
      if (code === 0) {
        resolve(stdout);
      } else {
        reject(new CliError(`CLI exited with code ${code}: ${stderr.trim()}`, code ?? -1, stderr));
      }
    });
  });
}
