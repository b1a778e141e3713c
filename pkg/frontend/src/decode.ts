// Decoded-answer model: rows reference code-table symbols; the symbol map in
// the same (decrypted) payload expands them to item lists.

export interface SelectRowWire {
  tid: number;
  symbols: string[];
}

export interface SymbolRowWire {
  symbol: string;
  count: number;
}

export type RowWire = SelectRowWire | SymbolRowWire;

export interface AnswerPayload {
  op: string;
  mode: string;
  count: number;
  approximate: boolean;
  rows: RowWire[];
  symbols: Record<string, number[]>;
}

export interface DecodedRow {
  tid: number | null;
  symbols: string[];
  items: number[];
  count: number | null;
}

export function isAnswerPayload(value: unknown): value is AnswerPayload {
  if (typeof value !== "object" || value === null) return false;
  const v = value as Record<string, unknown>;
  return typeof v.op === "string" && Array.isArray(v.rows) &&
    typeof v.symbols === "object" && v.symbols !== null;
}

export function decodeRows(payload: AnswerPayload): DecodedRow[] {
  const rows: DecodedRow[] = [];
  for (const row of payload.rows) {
    if ("tid" in row) {
      const items = new Set<number>();
      for (const sym of row.symbols) {
        for (const item of payload.symbols[sym] ?? []) items.add(item);
      }
      rows.push({
        tid: row.tid,
        symbols: row.symbols,
        items: [...items].sort((a, b) => a - b),
        count: null,
      });
    } else {
      rows.push({
        tid: null,
        symbols: [row.symbol],
        items: [...(payload.symbols[row.symbol] ?? [])].sort((a, b) => a - b),
        count: row.count,
      });
    }
  }
  return rows;
}

export function expandSymbol(payload: AnswerPayload, symbol: string): string {
  const items = payload.symbols[symbol];
  return items ? items.join(" ") : "?";
}
