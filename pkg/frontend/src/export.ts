/**
 * Aggregate table export: delimited text that round-trips exactly.
 */
import type { Aggregate } from './api';

const HEADER = 'model,votes,percentage';

function escapeField(value: string): string {
  return /[",\n]/.test(value) ? `"${value.replaceAll('"', '""')}"` : value;
}

function splitLine(line: string): string[] {
  const fields: string[] = [];
  let field = '';
  let quoted = false;
  for (let i = 0; i < line.length; i++) {
    const ch = line[i];
    if (quoted) {
      if (ch === '"' && line[i + 1] === '"') {
        field += '"';
        i++;
      } else if (ch === '"') {
        quoted = false;
      } else {
        field += ch;
      }
    } else if (ch === '"') {
      quoted = true;
    } else if (ch === ',') {
      fields.push(field);
      field = '';
    } else {
      field += ch;
    }
  }
  fields.push(field);
  return fields;
}

/** Rows sorted by votes descending then name, to mirror the rendered table. */
export function sortedModels(aggregate: Aggregate): string[] {
  return Object.keys(aggregate.counts).sort(
    (a, b) => (aggregate.counts[b] ?? 0) - (aggregate.counts[a] ?? 0) || a.localeCompare(b),
  );
}

export function aggregateToCsv(aggregate: Aggregate): string {
  const lines = [HEADER];
  for (const model of sortedModels(aggregate)) {
    const pct = (aggregate.percentages[model] ?? 0).toFixed(2);
    lines.push(`${escapeField(model)},${aggregate.counts[model]},${pct}`);
  }
  lines.push(`total,${aggregate.total},100.00`);
  return lines.join('\n') + '\n';
}

export function parseAggregateCsv(text: string): Aggregate {
  const lines = text.trim().split('\n');
  if (lines[0] !== HEADER) throw new Error(`unexpected header: ${lines[0]}`);
  const counts: Record<string, number> = {};
  const percentages: Record<string, number> = {};
  let total = 0;
  for (const line of lines.slice(1)) {
    const [model, votes, pct] = splitLine(line);
    if (model === undefined || votes === undefined || pct === undefined) {
      throw new Error(`malformed row: ${line}`);
    }
    if (model === 'total') {
      total = Number(votes);
    } else {
      counts[model] = Number(votes);
      percentages[model] = Number(pct);
    }
  }
  return { counts, percentages, total };
}
