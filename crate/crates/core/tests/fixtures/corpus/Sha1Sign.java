import java.security.MessageDigest;

public class Sha1Sign {
    public byte[] fingerprint(byte[] cert) throws Exception {
        MessageDigest md = MessageDigest.getInstance("SHA-1");
        return md.digest(cert);
    }
}
