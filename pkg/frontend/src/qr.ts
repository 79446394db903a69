/**
 * QR rendering for share tokens.
 *
 * The gateway only ever emits a token *string*; turning it into pixels is
 * purely a console concern. Falls back to showing the raw token text when
 * QR generation is unavailable, since manual entry must always work.
 */

import QRCode from "qrcode";

export async function tokenToDataUrl(token: string): Promise<string | null> {
  try {
    return await QRCode.toDataURL(token, { errorCorrectionLevel: "M", margin: 2, scale: 4 });
  } catch {
    return null; // caller falls back to the raw token string
  }
}
